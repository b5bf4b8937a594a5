"""Flat key-value run configuration: "section.key = value" lines.

Unknown keys are hard errors so config typos never pass silently, and all
problems in a file are reported together in one pass. The serialized form
round-trips bit-exactly (floats via repr), which is what makes a manifest
reusable as a config.
"""

from dataclasses import dataclass, fields

from .engine import DEFAULT_Q_J_PER_MOL, DEFAULT_TEMPERATURE_K

_FORMAT_TOKENS = ("csv", "lattice", "ppm")


class ConfigError(ValueError):
    """One or more invalid configuration entries."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _parse_float_list(text):
    vals = [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    if not vals:
        raise ValueError("empty list")
    return tuple(vals)


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    grid_width: int = 300
    grid_height: int = 300
    grid_cell_size_um: float = 0.4
    seeding_n_grains: int = 0  # 0: saturated start, one grain per cell
    seeding_rng_seed: int = 1
    particles_radius_um: float = 1.2
    particles_volume_fraction: float = 0.05
    particles_rng_seed: int = 2
    engine_c: float = 1.0
    engine_q: float = DEFAULT_Q_J_PER_MOL
    engine_temperature: float = DEFAULT_TEMPERATURE_K
    engine_j_energy: float = 1.0
    engine_rng_seed: int = 3
    schedule_n_cas: int = 100_000
    schedule_record_every: int = 1000
    outputs_directory: str = "out"
    outputs_formats: str = "csv,lattice,ppm"
    sweep_radii_um: tuple = (1.2, 2.0, 2.8)
    sweep_fractions: tuple = (0.01, 0.025, 0.05, 0.1)
    sweep_seeds: int = 5
    sweep_base_seed: int = 20260810
    sweep_workers: int = 1
    fit_input_csv: str = "sweep.csv"
    calibrate_cas_per_minute_budget: float = 1000.0
    calibrate_seeds: int = 5
    calibrate_base_seed: int = 7

    def format_set(self):
        return {tok.strip() for tok in self.outputs_formats.split(",") if tok.strip()}

    def n_grains_or_saturated(self):
        """Config value 0 selects the saturated one-grain-per-cell start."""
        return self.seeding_n_grains if self.seeding_n_grains else None


# key in file -> (attribute, parser)
KEYMAP = {
    "grid.width": ("grid_width", int),
    "grid.height": ("grid_height", int),
    "grid.cell_size_um": ("grid_cell_size_um", float),
    "seeding.n_grains": ("seeding_n_grains", int),
    "seeding.rng_seed": ("seeding_rng_seed", int),
    "particles.radius_um": ("particles_radius_um", float),
    "particles.volume_fraction": ("particles_volume_fraction", float),
    "particles.rng_seed": ("particles_rng_seed", int),
    "engine.c": ("engine_c", float),
    "engine.q": ("engine_q", float),
    "engine.temperature": ("engine_temperature", float),
    "engine.j_energy": ("engine_j_energy", float),
    "engine.rng_seed": ("engine_rng_seed", int),
    "schedule.n_cas": ("schedule_n_cas", int),
    "schedule.record_every": ("schedule_record_every", int),
    "outputs.directory": ("outputs_directory", str),
    "outputs.formats": ("outputs_formats", str),
    "sweep.radii_um": ("sweep_radii_um", _parse_float_list),
    "sweep.fractions": ("sweep_fractions", _parse_float_list),
    "sweep.seeds": ("sweep_seeds", int),
    "sweep.base_seed": ("sweep_base_seed", int),
    "sweep.workers": ("sweep_workers", int),
    "fit.input_csv": ("fit_input_csv", str),
    "calibrate.cas_per_minute_budget": ("calibrate_cas_per_minute_budget", float),
    "calibrate.seeds": ("calibrate_seeds", int),
    "calibrate.base_seed": ("calibrate_base_seed", int),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in KEYMAP.items()}


def _validate(cfg, errors):
    def check(key, ok, why):
        if not ok:
            errors.append("%s: %s" % (key, why))

    check("grid.width", cfg.grid_width >= 3, "must be >= 3")
    check("grid.height", cfg.grid_height >= 3, "must be >= 3")
    check("grid.cell_size_um", cfg.grid_cell_size_um > 0, "must be positive")
    check("seeding.n_grains",
          0 <= cfg.seeding_n_grains <= cfg.grid_width * cfg.grid_height,
          "must be in 0..width*height (0 = one grain per cell)")
    check("particles.radius_um", cfg.particles_radius_um > 0, "must be positive")
    check("particles.volume_fraction",
          0.0 <= cfg.particles_volume_fraction < 1.0, "must be in [0, 1)")
    check("engine.c", cfg.engine_c > 0, "must be positive")
    check("engine.q", cfg.engine_q >= 0, "must be non-negative")
    check("engine.temperature", cfg.engine_temperature > 0, "must be positive")
    check("engine.j_energy", cfg.engine_j_energy > 0, "must be positive")
    check("schedule.n_cas", cfg.schedule_n_cas >= 0, "must be >= 0")
    check("schedule.record_every", cfg.schedule_record_every >= 1, "must be >= 1")
    check("outputs.formats",
          bool(cfg.format_set()) and cfg.format_set() <= set(_FORMAT_TOKENS),
          "must be a comma list drawn from %s" % (_FORMAT_TOKENS,))
    check("sweep.radii_um", all(v > 0 for v in cfg.sweep_radii_um),
          "radii must be positive")
    check("sweep.fractions", all(0.0 <= v < 1.0 for v in cfg.sweep_fractions),
          "fractions must be in [0, 1)")
    check("sweep.seeds", cfg.sweep_seeds >= 1, "must be >= 1")
    check("sweep.workers", cfg.sweep_workers >= 1, "must be >= 1")
    check("calibrate.cas_per_minute_budget",
          cfg.calibrate_cas_per_minute_budget > 0, "must be positive")
    check("calibrate.seeds", cfg.calibrate_seeds >= 1, "must be >= 1")


def parse_pairs(text):
    """Parse "key = value" lines into a raw dict; '#' starts a comment."""
    raw = {}
    errors = []
    for ln_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append("line %d: expected 'section.key = value', got %r"
                          % (ln_no, line.strip()))
            continue
        key, value = body.split("=", 1)
        key = key.strip()
        if key in raw:
            errors.append("line %d: duplicate key %r" % (ln_no, key))
            continue
        raw[key] = value.strip()
    if errors:
        raise ConfigError(errors)
    return raw


def from_pairs(raw):
    """Build a validated RunConfig from raw string pairs.

    Collects every problem (unknown key, bad value, out-of-range field)
    and raises them together.
    """
    errors = []
    cfg = RunConfig()
    for key, text in raw.items():
        entry = KEYMAP.get(key)
        if entry is None:
            errors.append("%s: unknown key" % key)
            continue
        attr, parse = entry
        try:
            setattr(cfg, attr, parse(text))
        except ValueError as exc:
            errors.append("%s: bad value %r (%s)" % (key, text, exc))
    if not errors:
        _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(text, overrides=None):
    """Full pipeline: text -> raw pairs -> overrides applied -> RunConfig."""
    raw = parse_pairs(text)
    if overrides:
        raw.update(overrides)
    return from_pairs(raw)


def serialize(cfg):
    """Stable text form with every key explicit (defaults expanded)."""
    lines = []
    for f in fields(RunConfig):
        key = _ATTR_TO_KEY[f.name]
        lines.append("%s = %s" % (key, _fmt(getattr(cfg, f.name))))
    return "\n".join(lines) + "\n"


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides)
