"""Command-line entry point: ``sovr {train,attack,analyze,flow,report}``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .attacks import kl_pgd_batch, pgd_batch
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DomainError, IdxFormatError
from .flow import flow_table
from .losses import lm_terms
from .report import histogram_from_lm, margin_lm, potentially_misclassified_rate
from .serialize import fmt, read_csv, read_json, write_csv, write_json
from .tensor_net import init_network, load_network, logits, save_network
from .trainer import train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _split_overrides(extra):
    """Turn ``["--train.lr", "0.05", ...]`` into ``[("train.lr", "0.05"), ...]``."""
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), val))
    return pairs


def _config(args, extra) -> ExperimentConfig:
    overrides = _split_overrides(extra)
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", str(args.seed)))
    return load_config(args.config, overrides)


def _path(cfg, name):
    return os.path.join(cfg.out, name)


def _checkpoint(args, cfg):
    path = args.checkpoint or _path(cfg, "checkpoint.json")
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint {path} not found")
    return load_network(path)


def _analysis_rng(cfg, tag):
    return np.random.default_rng([cfg.seed, tag])


def cmd_train(args, extra):
    if args.seed is None:
        raise ConfigError("train requires --seed")
    cfg = _config(args, extra)
    tcfg = cfg.train_config()
    train_set, val_set = cfg.train_set(), cfg.val_set()
    if val_set.dim != train_set.dim:
        raise ConfigError("train and validation feature dimensions differ")
    dims = cfg.layer_dims(train_set.dim, max(train_set.n_classes, val_set.n_classes))
    init = init_network(dims, cfg.raw["model"]["init_seed"])
    best, report = train(tcfg, train_set, val_set, init)
    os.makedirs(cfg.out, exist_ok=True)
    write_json(_path(cfg, "config.json"), cfg.raw)
    save_network(best, _path(cfg, "checkpoint.json"))
    save_network(report.last_network, _path(cfg, "last_checkpoint.json"))
    header, rows = report.as_table()
    write_csv(_path(cfg, "train.csv"), header, rows)
    n = report.lm_adv.shape[1]
    write_csv(_path(cfg, "train_lm.csv"), ["epoch", "index", "lm_adv"],
              [(e, i, report.lm_adv[e, i]) for e in range(report.lm_adv.shape[0])
               for i in range(n)])
    write_json(_path(cfg, "summary.json"), {
        "best_epoch": report.best_epoch,
        "best_robust_acc_pgd": report.rows[report.best_epoch]["robust_acc_pgd"],
        "final": report.rows[-1],
        "config": cfg.raw,
    })
    return EXIT_OK


def cmd_attack(args, extra):
    cfg = _config(args, extra)
    net = _checkpoint(args, cfg)
    ds = cfg.val_set()
    acfg = cfg.attack()
    rng = _analysis_rng(cfg, 2)
    if acfg.objective == "KL":
        res = kl_pgd_batch(net, ds.features, acfg, rng, ds.labels)
    else:
        res = pgd_batch(net, ds.features, ds.labels, acfg, rng)
    clean_ok = lm_terms(logits(net, ds.features), ds.labels) <= 0
    robust = clean_ok & ~res.success
    os.makedirs(cfg.out, exist_ok=True)
    write_csv(_path(cfg, "attack.csv"),
              ["index", "label", "clean_correct", "success", "flip_step", "lm_adv", "loss"],
              [(i, int(ds.labels[i]), bool(clean_ok[i]), bool(res.success[i]),
                int(res.flip_step[i]), res.lm[i], res.loss[i]) for i in range(len(ds))])
    write_json(_path(cfg, "attack.json"), {
        "n": len(ds),
        "clean_accuracy": float(np.mean(clean_ok)),
        "robust_accuracy": float(np.mean(robust)),
        "attack": cfg.raw["attack"],
    })
    return EXIT_OK


def cmd_analyze(args, extra):
    cfg = _config(args, extra)
    net = _checkpoint(args, cfg)
    ds = cfg.train_set()
    a = cfg.raw["analysis"]
    attack = cfg.attack() if a["use_attack"] else None
    lm = margin_lm(net, ds.features, ds.labels, attack, _analysis_rng(cfg, 3))
    hist = histogram_from_lm(lm, np.linspace(a["bin_lo"], a["bin_hi"], a["bins"] + 1))
    pot = potentially_misclassified_rate(net, ds, a["epsilon"])
    os.makedirs(cfg.out, exist_ok=True)
    write_csv(_path(cfg, "hist.csv"), ["bin_lo", "bin_hi", "correct", "incorrect"], hist.rows())
    write_csv(_path(cfg, "potential.csv"), ["index", "lm_clean", "g_max", "g_y", "flagged"],
              pot.rows())
    write_json(_path(cfg, "potential.json"), {
        "rate": pot.rate,
        "estimated": pot.estimated,
        "epsilon": a["epsilon"],
        "n": len(ds),
        "mean_lm": float(np.mean(lm)),
        "lm_source": "adversarial" if attack is not None else "clean",
    })
    return EXIT_OK


def cmd_flow(args, extra):
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    rows = flow_table(args.kind, args.w, args.K, args.t_max, args.dt)
    header = ["t", "z_y", "z_other", "lm_exact", "lm_approx", "lm_rk4"]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return EXIT_OK


def _hist_totals(path):
    rows = read_csv(path)
    return {"correct": sum(int(r["correct"]) for r in rows),
            "incorrect": sum(int(r["incorrect"]) for r in rows)}


def cmd_report(args, extra):
    cfg = _config(args, extra)
    out = {"config": cfg.raw}
    summary = _path(cfg, "summary.json")
    if os.path.exists(summary):
        s = read_json(summary)
        out["train"] = {k: s[k] for k in ("best_epoch", "best_robust_acc_pgd", "final")}
    if os.path.exists(_path(cfg, "attack.json")):
        a = read_json(_path(cfg, "attack.json"))
        out["attack"] = {k: a[k] for k in ("n", "clean_accuracy", "robust_accuracy")}
    if os.path.exists(_path(cfg, "potential.json")):
        p = read_json(_path(cfg, "potential.json"))
        flagged = [int(r["flagged"]) for r in read_csv(_path(cfg, "potential.csv"))]
        out["analysis"] = {
            "potential_rate": p["rate"],
            "potential_rate_from_csv": sum(flagged) / len(flagged) if flagged else 0.0,
            "estimated": p["estimated"],
            "mean_lm": p["mean_lm"],
            "histogram": _hist_totals(_path(cfg, "hist.csv")),
        }
    if len(out) == 1:
        raise ConfigError(f"no prior outputs found in {cfg.out}")
    write_json(_path(cfg, "report.json"), out)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="sovr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("train", "attack", "analyze", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        if name in ("attack", "analyze"):
            s.add_argument("--checkpoint")
    f = sub.add_parser("flow")
    f.add_argument("--kind", required=True, choices=["ovr", "ce"])
    f.add_argument("--w", type=float, required=True)
    f.add_argument("--K", type=int, required=True)
    f.add_argument("--t-max", type=float, required=True)
    f.add_argument("--dt", type=float, default=0.1)
    f.add_argument("--out")
    return p


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "analyze": cmd_analyze,
            "flow": cmd_flow, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args, extra = build_parser().parse_known_args(argv)
        return COMMANDS[args.command](args, extra)
    except (ConfigError, IdxFormatError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure: numerical or I/O
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
