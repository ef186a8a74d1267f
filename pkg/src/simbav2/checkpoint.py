"""Self-describing checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"SV2CKPT\\0"
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header
    remainder     float64 little-endian payload

The header holds the config text and its SHA-256 digest, the bit-generator
states of every RNG, integer counters, and a table of named arrays
``{"name", "shape", "offset"}`` where ``offset`` counts float64 elements
from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError
from .envs import make_env, restore_env
from .normalizers import RewardScalerState, RunningStat

if TYPE_CHECKING:
    from .trainer import RunState, TrainConfig

MAGIC = b"SV2CKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def pack(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def unpack(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size:
        raise ConfigError("checkpoint is truncated")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ConfigError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start : start + hlen].decode())
    payload = np.frombuffer(blob, dtype="<f8", offset=start + hlen)
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = payload[entry["offset"] : entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)
    return arrays, header["meta"]


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def dump_run(run: "RunState") -> bytes:
    from .trainer import dump_config

    agent = run.agent
    arrays: dict[str, np.ndarray] = {}
    for mod_name, mod in agent.modules().items():
        for k, v in mod.state_dict().items():
            arrays[f"{mod_name}.{k}"] = v
    arrays["log_alpha"] = agent.log_alpha.data
    arrays.update(agent.actor_opt.state_dict("opt.actor"))
    arrays.update(agent.critic_opt.state_dict("opt.critic"))
    arrays.update(agent.alpha_opt.state_dict("opt.alpha"))
    arrays["obs_rms.mean"] = agent.obs_rms.mean
    arrays["obs_rms.var"] = agent.obs_rms.var
    sc = run.scaler
    arrays["scaler.scalars"] = np.array([sc.G, sc.g_running_max])
    arrays["scaler.g_mean"] = np.asarray(sc.g_stat.mean)
    arrays["scaler.g_var"] = np.asarray(sc.g_stat.var)
    arrays.update(run.buffer.arrays())
    arrays["env.state"] = run.env.get_state()
    arrays["env.obs"] = run.obs
    arrays["metrics"] = np.array(run.metrics, dtype=np.float64).reshape(len(run.metrics), 5)
    config_text = dump_config(run.cfg)
    meta = {
        "config": config_text,
        "config_digest": run.cfg.digest(),
        "step": run.step,
        "evals": run.evals,
        "episode_start": run.episode_start,
        "updates": agent.updates,
        "obs_rms_count": agent.obs_rms.count,
        "scaler_count": sc.g_stat.count,
        "rng": {
            "env": _rng_state(run.env_rng),
            "act": _rng_state(run.act_rng),
            "sample": _rng_state(run.sample_rng),
            "agent": _rng_state(agent.rng),
        },
    }
    return pack(arrays, meta)


def restore_run(blob: bytes, cfg: "TrainConfig", env=None) -> "RunState":
    """Rebuild a RunState; ``cfg`` must hash to the digest stored in the checkpoint."""
    from .trainer import init_run

    arrays, meta = unpack(blob)
    if meta["config_digest"] != cfg.digest():
        raise ConfigError("checkpoint was written with a different configuration")
    run = init_run(cfg, env if env is not None else make_env(cfg.env))
    agent = run.agent
    for mod_name, mod in agent.modules().items():
        prefix = mod_name + "."
        mod.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    agent.log_alpha.data = arrays["log_alpha"].reshape(agent.log_alpha.data.shape).copy()
    agent.actor_opt.load_state_dict(arrays, "opt.actor")
    agent.critic_opt.load_state_dict(arrays, "opt.critic")
    agent.alpha_opt.load_state_dict(arrays, "opt.alpha")
    agent.obs_rms = RunningStat(arrays["obs_rms.mean"].copy(), arrays["obs_rms.var"].copy(), meta["obs_rms_count"])
    agent.updates = meta["updates"]
    G, gmax = arrays["scaler.scalars"]
    run.scaler = RewardScalerState(
        gamma=cfg.gamma, g_support_max=cfg.g_max, eps=cfg.reward_eps, bound=cfg.reward_bounding,
        G=float(G), g_running_max=float(gmax),
        g_stat=RunningStat(arrays["scaler.g_mean"].reshape(()).copy(), arrays["scaler.g_var"].reshape(()).copy(),
                           meta["scaler_count"]),
    )
    run.buffer.load_arrays(arrays)
    restore_env(run.env, arrays["env.state"])
    run.obs = arrays["env.obs"].copy()
    run.step = meta["step"]
    run.evals = meta["evals"]
    run.episode_start = meta["episode_start"]
    run.metrics = [(int(r[0]), *map(float, r[1:])) for r in arrays["metrics"]]
    _set_rng(run.env_rng, meta["rng"]["env"])
    _set_rng(run.act_rng, meta["rng"]["act"])
    _set_rng(run.sample_rng, meta["rng"]["sample"])
    _set_rng(agent.rng, meta["rng"]["agent"])
    return run
