import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to Python path
ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(ROOT / "src"))

from config_parser import ConfigParser  # noqa: E402
from harness.trainer import train  # noqa: E402
from models import Mode, PipelineConfig, Recording, RunConfig, SplitCounts  # noqa: E402
from network.resnet import preset_spec  # noqa: E402
from synth.generator import SPLITS, generate_all  # noqa: E402
from synth.manifest import load_recordings  # noqa: E402

CONFIG_DIR = ROOT / "config"

TINY_STAGES = [
    {"blocks": 1, "width": 4, "downsample": False},
    {"blocks": 1, "width": 8, "downsample": True},
]


@pytest.fixture(scope="session")
def heads():
    return ConfigParser().parse_heads_config(str(CONFIG_DIR / "heads_default.json"))


@pytest.fixture(scope="session")
def desk_phantom():
    return ConfigParser().parse_phantom_config(str(CONFIG_DIR / "phantom_desk.json"))


@pytest.fixture(scope="session")
def small_phantom(desk_phantom):
    """Desk geometry on a 48x32 frame with a handful of samples per split"""
    return desk_phantom.model_copy(update={
        "rows": 48,
        "cols": 32,
        "counts": SplitCounts(train=57, val=19, test=19, unknown=6, extra=4),
    })


@pytest.fixture
def tiny_overrides():
    return {"stem_channels": 4, "stages": TINY_STAGES, "input_size": 20}


@pytest.fixture
def tiny_spec(tiny_overrides):
    return preset_spec("desk", **tiny_overrides)


def run_config(root: Path, **updates) -> RunConfig:
    """Tiny end-to-end run writing everything under root"""
    values = dict(
        seed=7,
        pipeline=PipelineConfig(sigma=2.0, rescale=24, crop=20, image_mean=None, heatmap_mean=None),
        architecture="desk",
        architecture_overrides={"stem_channels": 4, "stages": TINY_STAGES},
        epochs=2,
        batch_size=8,
        data_dir=str(root / "data"),
        artifact=str(root / "model.dsca"),
        report_dir=str(root / "reports"),
        quantile_grid={"stop": 0.1, "step": 0.05},
        mc={"rate": 0.5, "runs": 5},
        workers=2,
        chunk_size=8,
    )
    values.update(updates)
    return RunConfig(**values)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_phantom, heads):
    """Small phantom splits generated once per session"""
    out = tmp_path_factory.mktemp("phantom")
    generate_all(small_phantom, 11, out, table=heads.table)
    return out


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    return {split: load_recordings(dataset_dir / f"{split}.jsonl") for split in SPLITS}


@pytest.fixture(scope="session")
def trained(tmp_path_factory, dataset_dir, dataset, heads):
    """Multihead tiny model trained on the session dataset"""
    cfg = run_config(tmp_path_factory.mktemp("run"), data_dir=str(dataset_dir))
    return cfg, train(cfg, heads, dataset["train"], dataset["val"])


def make_recording(mode=Mode.CW, label="AVO", baseline=0.25, rows=24, cols=16, seed=0, roi=None) -> Recording:
    rng = np.random.default_rng(seed)
    roi_row, roi_col = roi if roi is not None else (rows / 2, cols / 2)
    return Recording(image=rng.uniform(0.0, 1.0, (rows, cols)), roi_row=roi_row, roi_col=roi_col,
                     baseline=baseline, mode=mode, label=label)

