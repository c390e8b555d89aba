"""Command-line entry point: ``dictpbdw {offline,online,report,selftest}``."""

import argparse
import logging
import sys
import warnings

import numpy as np

from .errors import ArtifactError, ConfigError, DomainError, NumericalError

log = logging.getLogger("dictpbdw")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ARTIFACT = 0, 2, 3, 4


def _selftest(seed=0):
    """Small in-process property checks; returns a list of (name, ok) pairs."""
    from .dictionary import kkt_violation, lars_path
    from .estimator import build_observation, pbdw_recover, stability_constants
    from .linalg import BasisMatrix, InnerProductSpace, dual_norm, riesz, u_norm, u_orthonormalize
    from .sketch import EmbeddingSpec, realize

    rng = np.random.default_rng(seed)
    checks = []
    N = 40
    A = rng.standard_normal((N, N))
    space = InnerProductSpace(A @ A.T + N * np.eye(N))

    r = rng.standard_normal(N)
    checks.append(("riesz/dual norm", abs(dual_norm(space, r) - u_norm(space, riesz(space, r)))
                   <= 1e-10 * dual_norm(space, r)))

    obs = build_observation(space, rng.standard_normal((N, 10)))
    V = u_orthonormalize(space, rng.standard_normal((N, 4)))
    u = rng.standard_normal(N)
    res = pbdw_recover(obs, V, obs.observe(u))
    checks.append(("observation consistency",
                   np.allclose(obs.observe(res.state), obs.observe(u), atol=1e-10)))
    both = u_orthonormalize(space, np.hstack([V.columns, obs.W.columns]))
    dist = u_norm(space, u - both.columns @ (both.columns.T @ (space.gram @ u)))
    _, mu = stability_constants(obs, V)
    checks.append(("PBDW error bound", u_norm(space, u - res.state) <= mu * dist * (1 + 1e-8)))

    C = rng.standard_normal((12, 40))
    w = rng.standard_normal(12)
    path = lars_path(C, w)
    checks.append(("LASSO path KKT", all(kkt_violation(C, w, x, a) <= 1e-8 * path.alphas[0]
                                         for a, x in zip(path.alphas, path.solutions))))

    spec = EmbeddingSpec("gaussian", 50, N, seed=3)
    e1, e2 = realize(spec, space), realize(spec, space)
    basis = BasisMatrix(rng.standard_normal((N, 3)))
    checks.append(("embedding determinism",
                   np.array_equal(e1.primal(basis.columns), e2.primal(basis.columns))))
    return checks


def build_parser():
    parser = argparse.ArgumentParser(prog="dictpbdw", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("offline", help="build and persist offline artifacts")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--run-dir", help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, help="override the prior snapshot seed")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")

    p = sub.add_parser("online", help="run the recovery comparators on a test set")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int, help="override the test-set seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-truth", action="store_true",
                   help="dictionary recovery only, from coefficient-space artifacts")
    p.add_argument("--observations", help="CSV of observation vectors (with --no-truth)")
    p.add_argument("--emit-path-debug", action="store_true", help="write per-sample path CSVs")

    p = sub.add_parser("report", help="merge online results into CSV tables")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="run quick property checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import pipeline

    try:
        if args.verb == "offline":
            config = pipeline.RunConfig.load(args.config)
            if args.seed is not None:
                config.prior_seed = args.seed
            run_dir = pipeline.offline(config, args.run_dir, force=args.force)
            print(f"offline artifacts written to {run_dir}")
        elif args.verb == "online":
            out = pipeline.online(args.run_dir, test_seed=args.seed, no_truth=args.no_truth,
                                  workers=args.workers, observations=args.observations,
                                  emit_path_debug=args.emit_path_debug)
            if args.no_truth:
                print(f"{len(out)} recoveries written to {args.run_dir}/recoveries.csv")
            else:
                for meth, K, m, mean, mx in out.summary():
                    print(f"{meth:8s} K={K:<5d} m={m:<3d} mean={mean:.4e} max={mx:.4e}")
        elif args.verb == "report":
            out = pipeline.report(args.run_dirs, args.out)
            print(f"report written to {out}")
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                checks = _selftest(args.seed)
            for name, ok in checks:
                print(f"{'PASS' if ok else 'FAIL'} {name}")
            if not all(ok for _, ok in checks):
                return EXIT_NUMERICAL
    except (ConfigError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ArtifactError as exc:
        log.error("%s", exc)
        return EXIT_ARTIFACT
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
