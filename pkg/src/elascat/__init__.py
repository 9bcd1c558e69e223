"""Elastic multiple scattering from rigid spheres and time-reversal imaging."""

from .quadrature import DirectionGrid, SphereGrid, sphere_grid_for_order
from .specfun import ModeIndex, RadialTable, radial_table, spherical_harmonic, surface_gradient_Y
from .wavebasis import (CoefficientVector, HerglotzKernel, Material, PlaneWaveSpec,
                        eval_wave_field, far_field_from_outgoing, fundamental_solution,
                        herglotz_eval, plane_wave_coeffs)
from .scatmat import (ScatteringMatrixBlocks, load_scattering_blocks, small_sphere_eigenvalues,
                      sphere_scattering_blocks, store_scattering_blocks)
from .multiscat import (Particle, Scene, SceneOperator, SolveReport, eval_total_field,
                        load_scene, project_incoming, project_outgoing, solve_forward,
                        translate_outgoing_to_incoming)
from .trm import (FarFieldOperator, ImagingGrid, ImagingGridSpec, add_noise,
                  assemble_far_field_operator, imaging_function, limit_far_field_operator,
                  selective_focusing_kernels, time_reversal_spectrum)

__version__ = "0.1.0"
