"""certdp: certified differentially private convex optimization.

A phased empirical-risk-minimization trainer whose (epsilon, delta)-DP
guarantee is confirmed by an interactive verifier that checks only n
gradients and d * ceil(log2 n) committed discrete Gaussian draws, plus
descent-to-delete certified unlearning and a black-box-undetectable backdoor
demonstration.
"""

from .cert import (CertConfig, D2dConfig, Outcome, TamperMode, Transcript,
                   audit_transcript, d2d_prover, d2d_verifier,
                   prover_certify, run_local_session, verifier_certify)
from .dpcore import (DpGuarantee, PhaseParams, Schedule, compose_guarantee,
                     d2d_sigma, d2d_train_sigma, phase_schedule,
                     sensitivity_bound, snap_eta_pow2, suggested_eta)
from .fxp import (DEPLOY, TEST16, FxpValue, NumericProfile, PROFILES,
                  encode, fxp_add, fxp_mul, fxp_sub, from_field, sq_norm,
                  to_field)
from .gauss import (DensityTable, KnuthYaoTree, RvcsMode, build_density,
                    build_ky_tree, load_density, sample_local, save_density)
from .relproof import Backend, RelKind, RelationStatement
from .scopt import (Dataset, LossKind, LossSpec, Model, SolveStats,
                    d2d_train, d2d_unlearn, grad_phase, grad_point,
                    lemma1_budget, logistic_loss, phased_erm, quadratic_loss,
                    solve_phase)

__version__ = "0.1.0"
