"""
Command-line front end.

    vecgarch simulate  --n 2 --T 1000 --seed 1 --out sim/
    vecgarch estimate  --config run.cfg --out fit/
    vecgarch portfolio --config run.cfg --params fit/ --out cmp/
    vecgarch spectrum  --params fit/ --out spectra/

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
error.  Outputs of a failed run are removed.
"""

import argparse
import csv
import datetime as dt
import logging
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from vecgarch import model, portfolio, prelim
from vecgarch.constraints import ConstraintConfig, check
from vecgarch.errors import (
    ConfigError,
    DimensionError,
    IngestionError,
    InvalidInputError,
    VecGarchError,
)
from vecgarch.optimizer import IterationRecord, LikelihoodObjective, OptimizerConfig, estimate

logger = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


@dataclass
class RunConfig:
    input: str = None
    n: int = None
    T: int = 1000
    date_start: str = None
    date_end: str = None
    seed: int = 0
    out: str = "out"
    params: str = None
    # constraints
    K: float = None
    K_multiple: float = 4.0
    eps_AB: float = 1e-4
    eps_A: float = 1e-4
    eps_B: float = 1e-4
    eps_c: float = None
    eps_tilde_B: float = 1e-4
    # optimizer
    f_tol: float = 1e-5
    max_iter: int = 500
    bfgs: bool = True
    grad: str = "closed"
    trunc_delta: float = None
    # preliminary estimation
    method: str = "ogarch"
    lam: float = 0.94
    # simulation
    persistence: float = 0.9
    a_share: float = 0.1
    sim_variance: float = 1e-4
    # portfolio
    n_trials: int = 1000
    literal_exponent: bool = False

    def validate(self):
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.grad not in ("closed", "recursive"):
            raise ConfigError("grad must be 'closed' or 'recursive'")
        if self.method not in ("ewma", "ogarch"):
            raise ConfigError("method must be 'ewma' or 'ogarch'")
        if not 0 < self.lam < 1:
            raise ConfigError("lam must lie in (0, 1)")
        if not 0 < self.persistence < 1 or not 0 < self.a_share < 1:
            raise ConfigError("persistence and a_share must lie in (0, 1)")
        if self.sim_variance <= 0 or self.K_multiple <= 0:
            raise ConfigError("sim_variance and K_multiple must be positive")
        if self.n_trials < 1 or self.max_iter < 1:
            raise ConfigError("n_trials and max_iter must be >= 1")
        if self.trunc_delta is not None and self.trunc_delta <= 0:
            raise ConfigError("trunc_delta must be positive")
        return self


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    typ = _TYPES[key]
    raw = raw.strip()
    if raw.lower() in ("", "none") and key not in ("out",):
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_file(path):
    """Read a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def ingest_prices(path, n=None, date_start=None, date_end=None):
    """Read a price CSV (``date,TICKER...``) and return log-returns.

    Returns
    -------
    sample : Sample
    tickers : list of str
    dates : list of str
        Dates of the returns (the first price row has no return).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError("empty price file", row=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise IngestionError("header must be date,TICKER1,...", row=1)
    tickers = header[1:]
    width = len(header)
    dates, prices = [], []
    prev = None
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise IngestionError(f"expected {width} fields, found {len(row)}", row=i)
        try:
            d = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestionError(f"bad date {row[0]!r}", row=i) from None
        if prev is not None and d <= prev:
            raise IngestionError("dates are not strictly ascending", row=i)
        prev = d
        vals = []
        for cell in row[1:]:
            if not cell.strip():
                raise IngestionError("missing price", row=i)
            try:
                v = float(cell)
            except ValueError:
                raise IngestionError(f"bad price {cell!r}", row=i) from None
            if not np.isfinite(v) or v <= 0:
                raise IngestionError(f"price must be positive, got {cell.strip()}", row=i)
            vals.append(v)
        dates.append(d)
        prices.append(vals)
    P = np.array(prices, dtype=float).reshape(len(prices), len(tickers))
    keep = np.ones(len(dates), dtype=bool)
    if date_start is not None:
        keep &= np.array([d >= dt.date.fromisoformat(date_start) for d in dates], dtype=bool)
    if date_end is not None:
        keep &= np.array([d <= dt.date.fromisoformat(date_end) for d in dates], dtype=bool)
    P = P[keep]
    dates = [d for d, k in zip(dates, keep) if k]
    if n is not None:
        if n > len(tickers):
            raise IngestionError(f"requested {n} tickers but the file has {len(tickers)}")
        P, tickers = P[:, :n], tickers[:n]
    if P.shape[0] < 2:
        raise IngestionError("need at least two price rows")
    z = np.diff(np.log(P), axis=0)
    return model.Sample(z), tickers, [d.isoformat() for d in dates[1:]]


class _Outputs:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, root):
        self.root = root
        self.files = []
        self._created_root = not os.path.isdir(root)

    def path(self, name):
        os.makedirs(self.root, exist_ok=True)
        p = os.path.join(self.root, name)
        self.files.append(p)
        return p

    def matrix(self, name, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        np.savetxt(self.path(name), M, fmt="%.17g", delimiter=",")

    def text(self, name, content):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(content)

    def cleanup(self):
        for p in self.files:
            try:
                os.remove(p)
            except OSError:
                pass
        if self._created_root:
            try:
                os.rmdir(self.root)
            except OSError:
                pass


def _read_matrix(path):
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read matrix {path}: {exc}") from exc


def read_params(directory):
    c = _read_matrix(os.path.join(directory, "c.csv")).ravel()
    A = _read_matrix(os.path.join(directory, "A.csv"))
    B = _read_matrix(os.path.join(directory, "B.csv"))
    return model.VecParams(c=c, A=A, B=B)


def write_params(out, params, prefix=""):
    out.matrix(f"{prefix}c.csv", params.c[:, None])
    out.matrix(f"{prefix}A.csv", params.A)
    out.matrix(f"{prefix}B.csv", params.B)


def _kv(d):
    return "".join(f"{k}={v}\n" for k, v in d.items())


def constraint_config(cfg, sample):
    over = {
        "eps_AB": cfg.eps_AB,
        "eps_A": cfg.eps_A,
        "eps_B": cfg.eps_B,
        "eps_tilde_B": cfg.eps_tilde_B,
        "eps_c": cfg.eps_c,
        "K": cfg.K,
    }
    if cfg.K is None:
        from vecgarch.constraints import default_K

        over["K"] = default_K(sample, cfg.K_multiple)
    return prelim.default_constraint_config(sample, **over)


def _load_sample(cfg):
    if cfg.input is None:
        raise ConfigError("no input price file given (set input= or --input)")
    sample, tickers, dates = ingest_prices(cfg.input, cfg.n, cfg.date_start, cfg.date_end)
    return sample, tickers, dates


def _spectrum_files(out, params):
    rep = portfolio.spectrum_report(params)
    out.matrix("spectrum_A.csv", rep.eig_A[:, None])
    out.matrix("spectrum_B.csv", rep.eig_B[:, None])
    return rep


def cmd_simulate(cfg, out):
    n = cfg.n or 2
    rng = np.random.default_rng(cfg.seed)
    v = cfg.sim_variance
    ccfg = ConstraintConfig(K=10.0 * v * n, eps_c=1e-4 * v)
    params = prelim.random_feasible_params(
        n, ccfg, rng, persistence=cfg.persistence, a_share=cfg.a_share, variance=v
    )
    sample, _ = model.simulate(params, cfg.T, seed=int(rng.integers(2 ** 63)))
    logp = np.vstack([np.zeros(n), np.cumsum(sample.z, axis=0)]) + np.log(100.0)
    prices = np.exp(logp)
    start = dt.date(2000, 1, 3)
    lines = ["date," + ",".join(f"S{i + 1}" for i in range(n))]
    for t in range(prices.shape[0]):
        day = (start + dt.timedelta(days=t)).isoformat()
        lines.append(day + "," + ",".join(f"{x:.17g}" for x in prices[t]))
    out.text("prices.csv", "\n".join(lines) + "\n")
    write_params(out, params, prefix="true_")
    return 0


def _fit(cfg, sample, ccfg):
    theta0 = prelim.preliminary_estimate(sample, cfg.method, ccfg, lam=cfg.lam)
    k = None
    if cfg.grad == "recursive" and cfg.trunc_delta is not None:
        k = model.truncation_depth(ccfg, cfg.trunc_delta)
    obj = LikelihoodObjective(sample, grad=cfg.grad, k_trunc=k)
    opt = OptimizerConfig(f_tol=cfg.f_tol, max_iter=cfg.max_iter, use_bfgs=cfg.bfgs)
    res = estimate(obj, theta0, ccfg, opt)
    return theta0, obj, res


def cmd_estimate(cfg, out):
    sample, tickers, _ = _load_sample(cfg)
    ccfg = constraint_config(cfg, sample)
    theta0, obj, res = _fit(cfg, sample, ccfg)
    write_params(out, res.params)
    write_params(out, theta0, prefix="prelim_")
    out.text("trace.tsv", IterationRecord.HEADER + "\n" + "".join(r.as_line() + "\n" for r in res.trace))
    rep = check(res.params, ccfg)
    out.text("feasibility.txt", _kv(rep.as_dict()))
    _spectrum_files(out, res.params)
    acov = model.asymptotic_covariance(res.params, obj.sample)
    out.matrix("stderr.csv", acov.stderr[:, None])
    summary = {
        "tickers": ",".join(tickers),
        "n": sample.n,
        "T": sample.T,
        "parameters": res.params.n_params,
        "neg_loglik": f"{res.f:.17g}",
        "converged": res.converged,
        "reason": res.reason,
        "iterations": res.iterations,
        "accepted": res.n_accepted,
        "rejected": res.n_rejected,
        "grad_calls": res.grad_calls,
        "func_calls": res.func_calls,
        "wall_time": f"{res.wall_time:.3f}",
        "bfgs": cfg.bfgs,
        "grad": cfg.grad,
        "method": cfg.method,
        "L_bound_hit": res.L_bound_hit,
        "covariance_pinv": acov.pinv_used,
    }
    out.text("summary.txt", _kv(summary))
    return 0


def cmd_portfolio(cfg, out):
    sample, tickers, _ = _load_sample(cfg)
    ccfg = constraint_config(cfg, sample)
    if cfg.params is not None:
        params = read_params(cfg.params)
    else:
        _, _, res = _fit(cfg, sample, ccfg)
        params = res.params
    obj = LikelihoodObjective(sample)
    vec_path = model.filter(params, obj.sample, check_psd=False).H
    models = [prelim.ewma_path(sample, cfg.lam).H, prelim.ogarch_path(sample).H, vec_path]
    names = ["EWMA", "OGARCH", "VEC"]
    cmp = portfolio.compare_models(models, sample, cfg.n_trials, cfg.seed, names, cfg.literal_exponent)
    rows = cmp.to_rows()
    cols = ["model", "mse", "realized_var", "wins", "win_pct"]
    csv_lines = [",".join(cols)]
    txt_lines = ["".join(f"{c:>16}" for c in cols)]
    for r in rows:
        csv_lines.append(",".join(
            r["model"] if c == "model" else (str(r[c]) if c == "wins" else f"{r[c]:.17g}") for c in cols
        ))
        txt_lines.append("".join(
            f"{r[c]:>16}" if c in ("model", "wins") else f"{r[c]:>16.6g}" for c in cols
        ))
    out.text("comparison.csv", "\n".join(csv_lines) + "\n")
    out.text("comparison.txt", "\n".join(txt_lines) + "\n")
    return 0


def cmd_spectrum(cfg, out):
    if cfg.params is not None:
        params = read_params(cfg.params)
    else:
        n = cfg.n or 2
        ccfg = ConstraintConfig(K=cfg.K or 4.0 * np.sqrt(n), eps_c=cfg.eps_c or 1e-4,
                                eps_A=cfg.eps_A, eps_B=cfg.eps_B, eps_AB=cfg.eps_AB,
                                eps_tilde_B=cfg.eps_tilde_B)
        params = prelim.canonical_feasible_start(n, ccfg)
    rep = _spectrum_files(out, params)
    out.text("spectrum_summary.txt", _kv({"rank_A": rep.rank_A, "rank_B": rep.rank_B,
                                          "size": rep.eig_A.size}))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "portfolio": cmd_portfolio,
    "spectrum": cmd_spectrum,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error [config]: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--input", help="price CSV with header date,TICKER...")
    common.add_argument("--n", type=int, help="number of assets (first n tickers)")
    common.add_argument("--T", type=int, help="simulation length")
    common.add_argument("--method", choices=["ewma", "ogarch"])
    common.add_argument("--no-bfgs", dest="bfgs", action="store_false", default=None)
    common.add_argument("--grad", choices=["closed", "recursive"])
    common.add_argument("--params", help="directory holding c.csv, A.csv, B.csv")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="vecgarch", description="VEC(1,1) estimation with Bregman barriers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args):
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key in ("seed", "out", "input", "n", "T", "method", "bfgs", "grad", "params"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values).validate()


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (IngestionError, InvalidInputError, DimensionError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _Outputs(cfg.out)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg, out)
    except VecGarchError as exc:
        out.cleanup()
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        out.cleanup()
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BaseException:
        out.cleanup()
        raise
    logger.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
