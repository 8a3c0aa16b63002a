"""
Example: Comparing model variants on the bundled panel

This script fits the full model (variant d) and the model without random
effects (variant a) to ``data/lattice3x3`` and ranks them by PSIS-LOO.
Run it from the repository root.
"""

import sys
from pathlib import Path

from poiar import ModelConfig, ModelData, NutsConfig, Variant, compare_scores
from poiar.errors import PoiarError
from poiar.fit import fit_model
from poiar.graph import read_edge_list
from poiar.io import ingest_counts, ingest_covariates

DATA_DIR = Path("data/lattice3x3")


def load(variant):
    config = ModelConfig(
        variant=variant,
        growth_covariates="mobility, tier_2",
        baseline_covariates="density",
        standardize_per_area="mobility",
        standardize_global="density",
    )
    panel = ingest_counts(DATA_DIR / "counts.csv")
    designs = ingest_covariates(DATA_DIR / "covariates.csv", config, panel)
    return ModelData(read_edge_list(DATA_DIR / "edges.txt"), panel, designs, config)


def main():
    if not DATA_DIR.exists():
        print(f"ERROR: {DATA_DIR} not found, run this from the repository root.")
        sys.exit(1)

    nuts = NutsConfig(n_chains=4, n_warmup=500, n_iter=500, seed=1)
    reports = {}
    for variant in (Variant.A, Variant.D):
        print(f"\nFitting variant {variant.value}...")
        try:
            result = fit_model(load(variant), nuts)
        except PoiarError as e:
            print(f"✗ Error: {e}")
            sys.exit(1)
        scores = result.scores
        print(f"  max R-hat  {result.summary.max_rhat:.3f}")
        print(f"  WAIC       {scores.waic:.1f} (se {scores.waic_se:.1f})")
        print(f"  elpd_loo   {scores.elpd_loo:.1f} (se {scores.loo_se:.1f})")
        print(f"  high k     {scores.n_high_k}")
        reports[f"variant-{variant.value}"] = scores

    print("\n" + "=" * 70)
    print(compare_scores(reports).to_string(index=False))
    print("=" * 70)


if __name__ == "__main__":
    main()
