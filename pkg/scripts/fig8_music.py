"""Delay MSE of stacked and summed MUSIC correlations."""
from _common import parser, run

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    for variant in ("slice_sum", "correlation_sum"):
        run("fig8", f"fig8_music_{variant}", args, summation_variant=variant)
