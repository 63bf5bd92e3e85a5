"""Actor-critic decision stack in plain numpy (float64).

Actor and critic are separate tanh MLPs. The actor's logits go through a masked
softmax; masked entries get probability exactly zero. Updates follow

    actor loss  = -mean( log pi(a|s) * W )
    critic loss = mean( (R - V(s))^2 ) / 2
    R = r + gamma * V(s') * (1 - done),   W = R - V(s)

where the bootstrap ``V(s')`` is treated as a constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import N_ACTIONS, NONE, OBS_DIM, ORIENTATION_COLUMNS, Observation

CHECKPOINT_FORMAT = "leo-rrm-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class MLP:
    """Dense tanh network with a linear output layer."""

    def __init__(self, sizes: Sequence[int], rng=None, weights=None):
        self.sizes = tuple(int(s) for s in sizes)
        if weights is not None:
            self.layers = [(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64))
                           for W, b in weights]
            return
        rng = np.random.default_rng(rng)
        self.layers = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.layers.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                rng.uniform(-bound, bound, size=fan_out)))

    def copy(self) -> "MLP":
        return MLP(self.sizes, weights=[(W.copy(), b.copy()) for W, b in self.layers])

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if k < last:
                h = np.tanh(h)
        return h

    def forward_cached(self, x: np.ndarray):
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients of a scalar loss given dLoss/dOutput for a batch."""
        grads = [None] * len(self.layers)
        g = grad_out
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            grads[k] = (acts[k].T @ g, g.sum(axis=0))
            if k > 0:
                g = (g @ W.T) * (1.0 - acts[k] ** 2)
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def set_flat(self, v: np.ndarray) -> None:
        k = 0
        for idx, (W, b) in enumerate(self.layers):
            nW = W.size
            W = v[k:k + nW].reshape(W.shape).copy()
            k += nW
            b = v[k:k + b.size].copy()
            k += b.size
            self.layers[idx] = (W, b)
        if k != v.size:
            raise ValueError(f"flat vector has {v.size} entries, network needs {k}")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def all_finite(self) -> bool:
        return all(np.isfinite(W).all() and np.isfinite(b).all() for W, b in self.layers)


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, net: MLP, grads) -> None:
        if self.m is None:
            self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.layers]
            self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.layers]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, ((W, b), (gW, gb)) in enumerate(zip(net.layers, grads)):
            mW, mb = self.m[k]
            vW, vb = self.v[k]
            mW = self.beta1 * mW + (1 - self.beta1) * gW
            mb = self.beta1 * mb + (1 - self.beta1) * gb
            vW = self.beta2 * vW + (1 - self.beta2) * gW**2
            vb = self.beta2 * vb + (1 - self.beta2) * gb**2
            self.m[k], self.v[k] = (mW, mb), (vW, vb)
            net.layers[k] = (W - self.lr * (mW / c1) / (np.sqrt(vW / c2) + self.eps),
                             b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps))


def sgd_step(net: MLP, grads, lr: float) -> None:
    net.layers = [(W - lr * gW, b - lr * gb) for (W, b), (gW, gb) in zip(net.layers, grads)]


@dataclass
class PolicyParameters:
    actor: MLP
    critic: MLP
    gamma: float = 0.99
    lr_actor: float = 2e-4
    lr_critic: float = 5e-4
    optimizer: str = "sgd"  # or "adam"
    entropy_coef: float = 0.0
    # "stop_gradient": bootstrap with the live critic; "lagged": with a periodically synced copy
    target_mode: str = "stop_gradient"
    target_sync_every: int = 100
    # zero the orientation features before they reach either network
    withhold_orientation: bool = False
    updates: int = 0
    _target: Optional[MLP] = field(default=None, repr=False)
    _opt: dict = field(default_factory=dict, repr=False)

    @classmethod
    def init(cls, seed=0, hidden: Sequence[int] = (64, 64), **hyper) -> "PolicyParameters":
        ss = np.random.SeedSequence(seed)
        a_seed, c_seed = ss.spawn(2)
        actor = MLP((OBS_DIM, *hidden, N_ACTIONS), rng=np.random.default_rng(a_seed))
        critic = MLP((OBS_DIM, *hidden, 1), rng=np.random.default_rng(c_seed))
        return cls(actor=actor, critic=critic, **hyper)

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.actor.sizes[1:-1]

    def prepare(self, x: np.ndarray) -> np.ndarray:
        if self.withhold_orientation:
            x = np.array(x, dtype=np.float64, copy=True)
            x[..., list(ORIENTATION_COLUMNS)] = 0.0
        return x

    def target_critic(self) -> MLP:
        if self.target_mode == "lagged":
            if self._target is None:
                self._target = self.critic.copy()
            return self._target
        return self.critic

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.actor.copy(), self.critic.copy(), self.gamma, self.lr_actor,
                                self.lr_critic, self.optimizer, self.entropy_coef,
                                self.target_mode, self.target_sync_every,
                                self.withhold_orientation, self.updates)


def _features(obs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(obs, Observation):
        return obs.features, obs.mask
    return obs


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("mask has no valid action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def actor_forward(params: PolicyParameters, obs, mask=None) -> np.ndarray:
    """Action distribution over (4 roles, none); accepts one observation or a batch."""
    if mask is None:
        x, mask = _features(obs)
    else:
        x = obs
    return masked_softmax(params.actor.forward(params.prepare(x)), mask)


def critic_forward(params: PolicyParameters, obs) -> np.ndarray | float:
    x = obs.features if isinstance(obs, Observation) else np.asarray(obs)
    v = params.critic.forward(params.prepare(x))[..., 0]
    return float(v) if np.ndim(v) == 0 else v


def select_action(params: PolicyParameters, obs, mode: str = "sample", rng=None) -> int:
    probs = actor_forward(params, obs)
    if mode == "greedy":
        return int(np.argmax(probs))  # first maximum -> lowest role index
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                   np.flatnonzero(probs > 0)[-1]))


@dataclass
class Minibatch:
    states: np.ndarray  # (M, 16)
    masks: np.ndarray  # (M, 5)
    actions: np.ndarray  # (M,)
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions) -> "Minibatch":
        return cls(
            np.array([t.state for t in transitions], dtype=np.float64),
            np.array([t.mask for t in transitions], dtype=bool),
            np.array([t.action for t in transitions], dtype=np.int64),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.array([t.next_state for t in transitions], dtype=np.float64),
            np.array([t.done for t in transitions], dtype=bool),
        )


def td_targets(params: PolicyParameters, batch: Minibatch) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrapped returns R and TD errors W for every transition."""
    v_next = params.target_critic().forward(params.prepare(batch.next_states))[:, 0]
    R = batch.rewards + params.gamma * v_next * (~batch.dones)
    v = params.critic.forward(params.prepare(batch.states))[:, 0]
    return R, R - v


def actor_loss_and_grads(params: PolicyParameters, batch: Minibatch, W: np.ndarray):
    M = len(batch)
    x = params.prepare(batch.states)
    logits, acts = params.actor.forward_cached(x)
    probs = masked_softmax(logits, batch.masks)
    idx = np.arange(M)
    p_a = probs[idx, batch.actions]
    if np.any(p_a <= 0):
        raise TrainingError("minibatch contains an action with zero probability (masked-out?)")
    loss = -np.mean(np.log(p_a) * W)
    onehot = np.zeros_like(probs)
    onehot[idx, batch.actions] = 1.0
    g = -(W[:, None] * (onehot - probs)) / M
    if params.entropy_coef:
        logp = np.log(np.where(probs > 0, probs, 1.0))
        H = -(probs * logp).sum(axis=1)
        loss -= params.entropy_coef * H.mean()
        # d(-H)/dz = p * (log p + H)
        g += params.entropy_coef * probs * (logp + H[:, None]) / M
    return loss, params.actor.backward(acts, g)


def critic_loss_and_grads(params: PolicyParameters, batch: Minibatch, R: np.ndarray):
    M = len(batch)
    v, acts = params.critic.forward_cached(params.prepare(batch.states))
    err = R - v[:, 0]
    loss = 0.5 * np.mean(err**2)
    g = (-err / M)[:, None]
    return loss, params.critic.backward(acts, g)


def _apply(params: PolicyParameters, which: str, net: MLP, grads, lr: float) -> None:
    if params.optimizer == "sgd":
        sgd_step(net, grads, lr)
    elif params.optimizer == "adam":
        opt = params._opt.get(which)
        if opt is None:
            opt = params._opt[which] = Adam(lr)
        opt.step(net, grads)
    else:
        raise ValueError(f"unknown optimizer {params.optimizer!r}")


def a2c_update(params: PolicyParameters, batch: Minibatch) -> tuple[float, float]:
    """One actor step and one critic step on ``batch``; returns (actor_loss, critic_loss)."""
    R, W = td_targets(params, batch)
    a_loss, a_grads = actor_loss_and_grads(params, batch, W)
    c_loss, c_grads = critic_loss_and_grads(params, batch, R)
    finite = np.isfinite(a_loss) and np.isfinite(c_loss) and all(
        np.isfinite(gW).all() and np.isfinite(gb).all() for gW, gb in a_grads + c_grads)
    if not finite:
        raise TrainingError(
            f"non-finite loss or gradient at update {params.updates}: actor_loss={a_loss}, "
            f"critic_loss={c_loss}, max|R|={np.max(np.abs(R))}, max|W|={np.max(np.abs(W))}")
    _apply(params, "actor", params.actor, a_grads, params.lr_actor)
    _apply(params, "critic", params.critic, c_grads, params.lr_critic)
    params.updates += 1
    if params.target_mode == "lagged" and params.updates % params.target_sync_every == 0:
        params._target = params.critic.copy()
    return float(a_loss), float(c_loss)


class NeuralPolicy:
    """Adapter letting the simulator query an actor network."""

    uses_observation = True

    def __init__(self, params: PolicyParameters, mode: str = "greedy", rng=None):
        self.params = params
        self.mode = mode
        self.rng = np.random.default_rng(rng)

    def act(self, decision) -> int:
        obs = decision.observation
        if not obs.mask[:NONE].any():
            return NONE
        return select_action(self.params, obs, self.mode, self.rng)


# -- checkpoints --------------------------------------------------------------

def _net_dict(net: MLP) -> dict:
    return {"sizes": list(net.sizes), "params": net.flat().tolist()}


def save_checkpoint(params: PolicyParameters, path) -> Path:
    """Write a JSON checkpoint. Floats use shortest round-trip repr, so loading is exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "input": OBS_DIM, "hidden": list(params.hidden), "actions": N_ACTIONS,
            "activation": "tanh", "dtype": "float64",
            "layout": "per layer: W row-major (fan_in x fan_out), then b",
            "withhold_orientation": params.withhold_orientation,
        },
        "hyperparameters": {
            "gamma": params.gamma, "lr_actor": params.lr_actor, "lr_critic": params.lr_critic,
            "optimizer": params.optimizer, "entropy_coef": params.entropy_coef,
            "target_mode": params.target_mode, "target_sync_every": params.target_sync_every,
        },
        "updates": params.updates,
        "actor": _net_dict(params.actor),
        "critic": _net_dict(params.critic),
    }
    path = Path(path)
    path.write_text(json.dumps(doc))
    return path


def _load_net(d: dict, expect_in: int, expect_out: int, which: str) -> MLP:
    sizes = [int(s) for s in d["sizes"]]
    if sizes[0] != expect_in or sizes[-1] != expect_out:
        raise CheckpointError(
            f"{which} shape mismatch: checkpoint {sizes[0]}->{sizes[-1]}, "
            f"expected {expect_in}->{expect_out}")
    net = MLP(sizes, rng=0)
    flat = np.array(d["params"], dtype=np.float64)
    if flat.size != net.n_params:
        raise CheckpointError(f"{which} has {flat.size} parameters, sizes imply {net.n_params}")
    net.set_flat(flat)
    return net


def load_checkpoint(path) -> PolicyParameters:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    arch = doc["architecture"]
    if arch["input"] != OBS_DIM or arch["actions"] != N_ACTIONS:
        raise CheckpointError(
            f"{path}: architecture {arch['input']}->{arch['actions']} does not match "
            f"{OBS_DIM}->{N_ACTIONS}")
    h = doc["hyperparameters"]
    return PolicyParameters(
        actor=_load_net(doc["actor"], OBS_DIM, N_ACTIONS, "actor"),
        critic=_load_net(doc["critic"], OBS_DIM, 1, "critic"),
        gamma=h["gamma"], lr_actor=h["lr_actor"], lr_critic=h["lr_critic"],
        optimizer=h["optimizer"], entropy_coef=h["entropy_coef"],
        target_mode=h["target_mode"], target_sync_every=h["target_sync_every"],
        withhold_orientation=arch.get("withhold_orientation", False),
        updates=doc.get("updates", 0),
    )
