import os
import json
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from app.utils.exceptions import InvalidConfig, OutputError

EXPERIMENTS = ('pathological1', 'pathological2', 'tabular', 'laplace', 'burgers', 'theorem', 'nested-kriging')
DEFAULT_GRID = {'laplace': 64, 'burgers': 128}
DEFAULT_NS = [50 * 2 ** k for k in range(11)]
MANIFEST_PACKAGES = ('numpy', 'scipy', 'pandas', 'matplotlib', 'python-dotenv')


@dataclass
class RunConfig:
    """
    Everything one experiment run needs. Sizes left at None take the
    experiment's own default.
    """

    experiment: str
    seed: int = 0
    output_dir: str = 'results'
    dump_fields: bool = False
    plots: bool = False
    # PDE experiments
    n_train: int = 60
    n_test: int = 20
    grid: Optional[int] = None
    nt: int = 128
    subsample: Optional[int] = 100
    n_colloc: int = 400
    anchor_budget: int = 2000
    reg: float = 1e-3
    # theorem
    Ns: List[int] = field(default_factory=lambda: list(DEFAULT_NS))
    trials: int = 500
    n_models: int = 3
    eps: float = 0.1
    rho: float = 0.5
    kappa: Optional[float] = 1.0
    # nested kriging
    nk_models: int = 10
    nk_interior: int = 20
    nk_boundary: int = 12
    nk_lengthscale: float = 0.5
    nk_grid: int = 21
    # tabular
    data: Optional[str] = None
    target: Optional[str] = None
    n_splits: int = 20
    learners: List[str] = field(default_factory=lambda: ['ridge', 'knn', 'gbt', 'krr'])
    ratios: List[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidConfig(f"unknown experiment '{self.experiment}', expected one of {EXPERIMENTS}")
        if self.grid is None:
            self.grid = DEFAULT_GRID.get(self.experiment, 64)
        positive = ['n_train', 'n_test', 'grid', 'nt', 'n_colloc', 'anchor_budget', 'trials', 'n_models',
                    'nk_models', 'nk_interior', 'nk_boundary', 'nk_grid', 'n_splits']
        bad = [name for name in positive if getattr(self, name) < 1]
        if self.subsample is not None and self.subsample < 1:
            bad.append('subsample')
        if not self.Ns or any(n < 1 for n in self.Ns):
            bad.append('Ns')
        if self.reg < 0 or self.eps <= 0 or self.nk_lengthscale <= 0:
            bad.append('reg/eps/nk_lengthscale')
        if bad:
            raise InvalidConfig(f"invalid sizes: {bad}")
        if (self.data is None) != (self.target is None):
            raise InvalidConfig("'data' and 'target' must be given together")
        self.Ns = [int(n) for n in self.Ns]

    @classmethod
    def from_dict(cls, experiment: str, values: dict) -> "RunConfig":
        """Build a config from JSON-style values; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {unknown}")
        settings = dict(values)
        settings['experiment'] = experiment
        try:
            return cls(**settings)
        except TypeError as e:
            raise InvalidConfig(f"invalid configuration value: {e}") from e

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir)


def load_config(path=None):
    """
    Load configuration from .env file and config.json (or ``path``).

    Returns:
        dict of configuration values; environment variables override the file
    """
    load_dotenv()

    config_path = Path(path) if path is not None else Path(__file__).parent / "config.json"
    if path is not None and not config_path.exists():
        raise InvalidConfig(f"config file {config_path} does not exist")

    config = {}
    if config_path.exists():
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                config = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{config_path} is not valid JSON: {e}") from e
        if not isinstance(config, dict):
            raise InvalidConfig(f"{config_path} must hold a JSON object")

    # Environment variables override JSON config
    if os.getenv('MEVA_SEED'):
        try:
            config['seed'] = int(os.environ['MEVA_SEED'])
        except ValueError as e:
            raise InvalidConfig(f"MEVA_SEED must be an integer, got '{os.environ['MEVA_SEED']}'") from e
    if os.getenv('MEVA_OUTPUT_DIR'):
        config['output_dir'] = os.environ['MEVA_OUTPUT_DIR']
    return config


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy of ``config`` with the non-None command-line values applied."""
    values = {key: value for key, value in overrides.items() if value is not None}
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfig(f"unknown configuration keys: {unknown}")
    if 'grid' not in values and 'experiment' in values and values['experiment'] != config.experiment:
        values['grid'] = None
    return replace(config, **values)


def package_versions():
    versions = {'python': platform.python_version()}
    for package in MANIFEST_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = 'unknown'
    return versions


def save_manifest(config: RunConfig, out_dir, wall_time: float) -> Path:
    """
    Save the run configuration, seed, package versions and wall time.

    Args:
        config: Configuration the run used
        out_dir: Output directory of the run
        wall_time: Seconds spent in the experiment

    Returns:
        Path of manifest.json
    """
    manifest = {
        'experiment': config.experiment,
        'seed': config.seed,
        'config': asdict(config),
        'versions': package_versions(),
        'wall_time_seconds': wall_time,
    }
    manifest_path = Path(out_dir) / 'manifest.json'
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise OutputError(f"could not write {manifest_path}: {e}") from e
    return manifest_path
