"""Doppler and delay MSE against SNR for N = K = 8, L = 3."""
from _common import parser, run

if __name__ == "__main__":
    run("fig3", "fig3_snr", parser(__doc__).parse_args(),
        methods=("two_layer", "two_stage", "classical_vbi", "fft_coarse"))
