"""INI-style run configuration with full validation before any compute."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from .graphspace import SearchSpace
from .search import MODES, SearchConfig, TrainConfig
from .toy import ToyConfig


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _slots(text: str) -> tuple[tuple[int, int], ...]:
    """'0-1 0-2 1-2' -> ((0, 1), (0, 2), (1, 2))"""
    out = []
    for tok in text.replace(",", " ").split():
        a, b = tok.split("-")
        out.append((int(a), int(b)))
    return tuple(out)


# section -> key -> (parser, accepted-values note or None)
Parser = Callable[[str], Any]
SCHEMA: dict[str, dict[str, tuple[Parser, tuple | None]]] = {
    "space": {
        "preset": (str, ("nb201", "nb101", "custom")),
        "kind": (str, ("edge", "node")),
        "num_nodes": (int, None),
        "node_vocab_size": (int, None),
        "edge_vocab_size": (int, None),
        "edge_template": (str, ("fixed", "free")),
        "max_edges": (int, None),
        "slots": (_slots, None),
        "oracle": (str, ("synthetic", "tabular")),
        "oracle_path": (str, None),
        "oracle_seed": (int, None),
    },
    "models": {
        "gnn_layers": (int, None),
        "gnn_channels": (int, None),
        "latent_dim": (int, None),
        "icnn_layers": (int, None),
        "icnn_hidden": (int, None),
        "decoder_hidden": (int, None),
        "direction": (str, ("in", "out", "both")),
    },
    "training": {
        "lr": (float, None),
        "beta1": (float, None),
        "beta2": (float, None),
        "epochs": (int, None),
        "pred_epochs": (int, None),
        "batch_vae": (int, None),
        "batch_pred": (int, None),
        "kl_weight": (float, None),
        "seed": (int, None),
        "dataset": (str, None),
        "q_start": (int, None),
    },
    "search": {
        "q_start": (int, None),
        "q_max": (int, None),
        "rho": (float, None),
        "k": (int, None),
        "eta0": (float, None),
        "delta_eta": (float, None),
        "noise_eps": (float, None),
        "max_escalations": (int, None),
        "mode": (str, MODES),
        "finetune_epochs": (int, None),
        "checkpoint_every": (int, None),
        "seeds": (_int_list, None),
    },
    "toy": {
        "latent_dims": (_int_list, None),
        "points_per_axis": (int, None),
        "hidden": (int, None),
        "icnn_hidden": (int, None),
        "icnn_layers": (int, None),
        "epochs": (int, None),
        "batch_size": (int, None),
        "lr": (float, None),
    },
    "eval": {
        "sizes": (_int_list, None),
        "repeats": (int, None),
        "heldout": (int, None),
    },
    "viz": {
        "top_n": (int, None),
        "worst_n": (int, None),
        "dataset": (str, None),
    },
}


@dataclass
class EvalConfig:
    sizes: list[int] = field(default_factory=lambda: [100, 400, 1600])
    repeats: int = 5
    heldout: int = 5000


@dataclass
class VizConfig:
    top_n: int = 100
    worst_n: int = 100
    dataset: str | None = None


@dataclass
class RunConfig:
    space: SearchSpace
    oracle: str = "synthetic"
    oracle_path: str | None = None
    oracle_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    viz: VizConfig = field(default_factory=VizConfig)
    seed: int = 0
    seeds: list[int] = field(default_factory=list)
    dataset: str | None = None


def _parse(cp: configparser.ConfigParser) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; accepted sections: {', '.join(SCHEMA)}")
        out[sec] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in [{section}]; accepted keys: {', '.join(SCHEMA[sec])}")
            parser, choices = SCHEMA[sec][key]
            try:
                value = parser(raw.strip())
            except ValueError:
                raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {parser.__name__}") from None
            if choices is not None and value not in choices:
                raise ConfigError(f"[{section}] {key} = {value!r}; accepted values: {', '.join(choices)}")
            out[sec][key] = value
    return out


def _space(sec: dict[str, Any]) -> SearchSpace:
    preset = sec.get("preset", "custom")
    if preset == "nb201":
        return SearchSpace.nb201()
    if preset == "nb101":
        return SearchSpace.nb101()
    required = ("kind", "num_nodes", "node_vocab_size", "edge_vocab_size")
    missing = [k for k in required if k not in sec]
    if missing:
        raise ConfigError(f"[space] needs preset = nb201|nb101 or the keys {', '.join(missing)}")
    kwargs = {k: sec[k] for k in ("kind", "num_nodes", "node_vocab_size", "edge_vocab_size",
                                  "edge_template", "max_edges", "slots") if k in sec}
    try:
        return SearchSpace(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[space] does not describe a valid search space: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return build_config(_parse(cp))


def build_config(sections: dict[str, dict[str, Any]]) -> RunConfig:
    if "space" not in sections:
        raise ConfigError("missing [space] section defining the search space")
    sp = sections["space"]
    space = _space(sp)
    tr, md, se = sections.get("training", {}), sections.get("models", {}), sections.get("search", {})

    seed = tr.get("seed", 0)
    env = os.environ.get("CRLSO_SEED")
    if env not in (None, ""):
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"CRLSO_SEED={env!r} is not an integer") from None

    train_keys = {f.name for f in fields(TrainConfig)}
    train = TrainConfig(**{k: v for k, v in {**md, **tr}.items() if k in train_keys})
    for k in ("gnn_layers", "gnn_channels", "latent_dim", "icnn_layers", "icnn_hidden", "decoder_hidden",
              "epochs", "batch_vae", "batch_pred"):
        if getattr(train, k) < 1:
            raise ConfigError(f"{k} must be a positive integer")
    if train.lr <= 0 or not (0 <= train.beta1 < 1 and 0 <= train.beta2 < 1):
        raise ConfigError("lr must be positive and beta1, beta2 must lie in [0, 1)")

    q_max = se.get("q_max", 600)
    rho = se.get("rho", 0.5)
    if not 0 < rho <= 1:
        raise ConfigError("rho must lie in (0, 1]")
    q_start = se.get("q_start", tr.get("q_start", max(1, round(rho * q_max))))
    try:
        search = SearchConfig(Q_start=q_start, Q_max=q_max, K=se.get("k", 10), eta0=se.get("eta0", 0.02),
                              delta_eta=se.get("delta_eta", 0.02), noise_eps=se.get("noise_eps", 0.05),
                              max_escalations=se.get("max_escalations", 50), mode=se.get("mode", "cr"),
                              finetune_epochs=se.get("finetune_epochs", 50), seed=seed,
                              checkpoint_every=se.get("checkpoint_every", 0))
    except ValueError as exc:
        raise ConfigError(f"[search] {exc}") from None

    toy = ToyConfig(seed=seed, **sections.get("toy", {}))
    if not toy.latent_dims or min(toy.latent_dims) < 1:
        raise ConfigError("[toy] latent_dims must list positive integers")
    ev = EvalConfig(**sections.get("eval", {}))
    if not ev.sizes or min(ev.sizes) < 2 or ev.repeats < 1:
        raise ConfigError("[eval] sizes must be integers >= 2 and repeats >= 1")
    viz = VizConfig(**sections.get("viz", {}))

    oracle = sp.get("oracle", "synthetic")
    if oracle == "tabular" and "oracle_path" not in sp:
        raise ConfigError("[space] oracle = tabular needs oracle_path")
    if oracle == "synthetic" and (space.kind != "edge" or space.edge_template != "fixed"):
        raise ConfigError("[space] the synthetic oracle needs a fixed-template operator-on-edge space; "
                          "use oracle = tabular")
    return RunConfig(space=space, oracle=oracle, oracle_path=sp.get("oracle_path"),
                     oracle_seed=sp.get("oracle_seed", 0), train=train, search=search, toy=toy, eval=ev,
                     viz=viz, seed=seed, seeds=se.get("seeds", []), dataset=tr.get("dataset"))
