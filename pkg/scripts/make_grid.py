"""Write the model x sampler config grid for both toy presets into configs/grid/.

Every file starts from the ExperimentConfig defaults, so rerun this after
changing a default.
"""
from pathlib import Path

from difpath.config import ExperimentConfig, ModelConfig, DatasetConfig
from difpath.samplers import SamplerConfig

ROOT = Path(__file__).resolve().parents[1]
SAMPLERS = {
    "ddpm": SamplerConfig("ddpm", 1000),
    "ddim": SamplerConfig("ddim", 50),
    "eps": SamplerConfig("eps", 1000, eps_scale_s=1.014),
}
GRID = [("DDPM", "ddpm"), ("DDPM", "eps"), ("DDPM", "ddim"), ("LDM", "ddpm"), ("LDM", "ddim")]


def main():
    out = ROOT / "configs" / "grid"
    out.mkdir(parents=True, exist_ok=True)
    for preset in ("PKGH-toy-224", "PKGH-toy-336"):
        for kind, sampler in GRID:
            name = f"{preset.lower()}_{kind.lower()}_{sampler}"
            cfg = ExperimentConfig(output_dir=f"runs/{name}", dataset=DatasetConfig(preset=preset),
                                   model=ModelConfig(kind=kind), sampler=SAMPLERS[sampler])
            (out / f"{name}.json").write_text(cfg.validate().to_json())
            print(out / f"{name}.json")


if __name__ == "__main__":
    main()
