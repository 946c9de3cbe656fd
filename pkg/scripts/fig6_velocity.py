"""MSE against SNR for several maximum target speeds."""
from _common import parser, run

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    for v in (120.0, 270.0, 300.0):
        run("fig6", f"fig6_velocity_{int(v)}kmh", args, max_velocity_kmh=v)
