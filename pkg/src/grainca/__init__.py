"""2D cellular-automata grain growth with second-phase particle pinning."""

from .engine import (AuditTrace, EngineParams, StepReport, attempt_probability,
                     cell_energy, delta_energy, pins, rng_state, run,
                     run_audited, run_with_reports, step)
from .lattice import (PARTICLE, Lattice, from_text, is_boundary_cell, load_text,
                      neighbors, save_text, to_microns, to_text)
from .metrics import (GrainLabeling, GrainStats, KineticsPoint, KineticsSeries,
                      grain_stats, label_grains, record_kinetics)
from .seeding import (ParticleSpec, PlacementError, SeedConfig, place_particles,
                      voronoi_init)
from .zener import (ExperimentalRow, ExperimentalTable, SweepBase, SweepResult,
                    TimeCalibration, ZenerFit, calibrate_time, default_table,
                    fit_zener, limiting_size, staged_run, sweep)

__version__ = "0.1.0"
