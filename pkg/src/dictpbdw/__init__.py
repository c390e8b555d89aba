"""Dictionary-based PBDW state estimation with sketched residual surrogates."""

from .errors import (ArtifactError, ConfigError, ConvergenceWarning, DictPBDWError, DomainError,
                     IllPosedError, ModelError, NumericalError, RankError)
from .linalg import (BasisMatrix, InnerProductSpace, dual_norm, pod, project, riesz, u_inner,
                     u_norm, u_orthonormalize)
from .sketch import (EmbeddingSpec, UEmbedding, check_embedding, gaussian_embed_dim, realize,
                     sketch_dual, sketch_primal)
from .model import (AffineModel, ParameterBox, SeparatedResidual, assemble, residual_norm,
                    separated, solve_state)
from .estimator import (ExactSurrogate, ObservationSpace, RecoveryResult, SketchedOffline,
                        box_ls_solve, build_observation, pbdw_recover, select_space,
                        sketched_offline, stability_constants, surrogate_exact,
                        surrogate_sketched)
from .dictionary import (Dictionary, LarsCaps, LassoPath, best_in_library, build_dictionary,
                         dict_recover, lars_path, path_to_library, perturb_dictionary)
from .problems import (SensorSpec, advection_diffusion_lite, sample_parameters, sensor_pattern,
                       sensors_radial, thermal_block)

__version__ = "0.1.0"
