"""MSE at 15 dB as the number of paths grows from 1 to 4."""
from _common import parser, run

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    for L in (1, 2, 3, 4):
        run("fig5", f"fig5_paths_L{L}", args, n_targets=L, compute_crb=False)
