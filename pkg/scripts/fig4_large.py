"""MSE against SNR for the larger N = 16, K = 32 geometry."""
from _common import parser, run

if __name__ == "__main__":
    run("fig4", "fig4_large", parser(__doc__).parse_args())
