"""Policy bundle: every network of the cooperative policy plus the
solitary baseline, with binary checkpoint I/O.

Wiring per network: one FC+ReLU trunk per input group, concatenation,
an FC-ReLU-FC head down to a small feature width, then a linear output
layer. Message sets enter through the two-stream attention encoders.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import AttentionEncoder, Linear, Mlp, ParamStore

OBS_DIM = 72
ACT_DIM = 2

CKPT_MAGIC = b"FNCP"
CKPT_VERSION = 1


@dataclass
class MlpSpec:
    """Layer widths. Defaults follow the 256-wide trunk / 24-wide feature
    layout; desk-scale training profiles shrink them."""

    trunk: int = 256
    head: int = 256
    feat: int = 24
    embed: int = 24  # attention key/value width per stream

    @property
    def msg_dim(self) -> int:
        return 2 * self.embed


class GroupNet:
    """Trunks per input group -> concat -> FC(head)-ReLU-FC(feat) -> linear out."""

    def __init__(self, store: ParamStore, name: str, group_dims: Sequence[int],
                 out_dim: int, spec: MlpSpec, rng: np.random.Generator,
                 zero_last: bool = False):
        self.group_dims = list(group_dims)
        self.trunks = [
            Linear(store, f"{name}.trunk{g}", dim, spec.trunk, rng)
            for g, dim in enumerate(group_dims)
        ]
        self.head = Mlp(store, f"{name}.head",
                        [spec.trunk * len(group_dims), spec.head, spec.feat], rng)
        self.out = Linear(store, f"{name}.out", spec.feat, out_dim, rng,
                          zero_init=zero_last)

    def __call__(self, groups: Sequence[Tensor | np.ndarray]) -> Tensor:
        feats = []
        for trunk, x in zip(self.trunks, groups):
            if not isinstance(x, Tensor):
                x = Tensor(np.atleast_2d(x))
            feats.append(ad.relu(trunk(x)))
        h = ad.relu(self.head(ad.concat(feats, axis=1)))
        return self.out(h)


class PolicyBundle:
    """All sub-networks: solitary actor/critic, navigation actor with twin
    critics, move filter actor with twin critics, and the two message
    encoders. Target critics are included for off-policy training."""

    def __init__(self, spec: MlpSpec | None = None, seed: int = 0,
                 dtype=np.float32, dup_patience: bool = True):
        self.spec = spec or MlpSpec()
        self.seed = seed
        self.dup_patience = dup_patience
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        s = self.spec
        md = s.msg_dim
        # patience message rows: (delta_now, rel_patience) and
        # (delta_next, rel_patience) - the duplicate scalar is dropped from
        # the second stream when dup_patience is off.
        pat_rows = (3, 3) if dup_patience else (3, 2)

        self.stores: dict[str, ParamStore] = {}

        def store(name):
            st = ParamStore(dtype=dtype)
            self.stores[name] = st
            return st

        st = store("enc_patience")
        self.enc_patience = AttentionEncoder(st, "enc", pat_rows, s.embed, rng)
        st = store("enc_state")
        self.enc_state = AttentionEncoder(st, "enc", (2, 2), s.embed, rng)

        st = store("solitary_actor")
        self.solitary_actor = GroupNet(st, "net", [OBS_DIM], 4, s, rng, zero_last=True)
        st = store("solitary_critic")
        self.solitary_critic = GroupNet(st, "net", [OBS_DIM, ACT_DIM], 1, s, rng)

        st = store("nav_actor")
        self.nav_actor = GroupNet(st, "net", [OBS_DIM, md], 4, s, rng, zero_last=True)
        self.nav_critics = []
        for k in (1, 2):
            st = store(f"nav_critic{k}")
            self.nav_critics.append(GroupNet(st, "net", [OBS_DIM, md, ACT_DIM], 1, s, rng))

        st = store("cf2_actor")
        self.cf2_actor = GroupNet(st, "net", [OBS_DIM, md], 2, s, rng, zero_last=True)
        self.cf2_critics = []
        for k in (1, 2):
            st = store(f"cf2_critic{k}")
            self.cf2_critics.append(GroupNet(st, "net", [OBS_DIM, md], 2, s, rng))

        # target critics start as copies of the online ones
        self.targets: dict[str, ParamStore] = {}
        self._target_nets: dict[str, GroupNet] = {}
        rng2 = np.random.Generator(np.random.Philox(key=np.uint64(seed)))

        def make_target(name: str, dims: list[int], out: int):
            tgt = ParamStore(dtype=dtype)
            net = GroupNet(tgt, "net", dims, out, s, rng2)
            tgt.load_state(self.stores[name].state())
            self.targets[name] = tgt
            self._target_nets[name] = net

        make_target("solitary_critic", [OBS_DIM, ACT_DIM], 1)
        for k in (1, 2):
            make_target(f"nav_critic{k}", [OBS_DIM, md, ACT_DIM], 1)
            make_target(f"cf2_critic{k}", [OBS_DIM, md], 2)

    def target_net(self, name: str) -> GroupNet:
        return self._target_nets[name]

    # -- forward helpers (rollout path, single observation) -----------------

    def actor_forward_np(self, which: str, groups: Sequence[np.ndarray]) -> np.ndarray:
        net = {"solitary": self.solitary_actor, "nav": self.nav_actor,
               "cf2": self.cf2_actor}[which]
        return net([np.atleast_2d(g) for g in groups]).data[0]

    def q_solitary_np(self, obs_vec: np.ndarray, action_norm: np.ndarray) -> float:
        out = self.solitary_critic([np.atleast_2d(obs_vec), np.atleast_2d(action_norm)])
        return float(out.data[0, 0])

    # -- checkpointing -------------------------------------------------------

    def _all_stores(self) -> list[tuple[str, ParamStore]]:
        items = [(name, st) for name, st in self.stores.items()]
        items += [(f"target/{name}", st) for name, st in self.targets.items()]
        return items

    def save_bytes(self) -> bytes:
        buf = io.BytesIO()
        entries = []
        for prefix, st in self._all_stores():
            for pname, tensor in st.params.items():
                entries.append((f"{prefix}/{pname}", tensor.data))
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<B", CKPT_VERSION))
        buf.write(struct.pack("<I", len(entries)))
        for name, data in entries:
            nb = name.encode()
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                buf.write(struct.pack("<I", d))
        for _, data in entries:
            buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        return buf.getvalue()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.save_bytes())

    def load_bytes(self, blob: bytes):
        buf = io.BytesIO(blob)
        if buf.read(4) != CKPT_MAGIC:
            raise ValueError("not a fairnav checkpoint")
        (version,) = struct.unpack("<B", buf.read(1))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", buf.read(4))
        shapes = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", buf.read(2))
            name = buf.read(nlen).decode()
            (ndim,) = struct.unpack("<B", buf.read(1))
            shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
            shapes.append((name, shape))
        state: dict[str, np.ndarray] = {}
        for name, shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(buf.read(4 * n), dtype="<f4").reshape(shape)
            state[name] = data
        for prefix, st in self._all_stores():
            sub = {
                pname: state[f"{prefix}/{pname}"] for pname in st.params
            }
            st.load_state(sub)

    def load(self, path):
        with open(path, "rb") as fh:
            self.load_bytes(fh.read())


def read_checkpoint_shapes(blob: bytes) -> dict[str, tuple[int, ...]]:
    """Parse only the checkpoint header: parameter names and shapes."""
    buf = io.BytesIO(blob)
    if buf.read(4) != CKPT_MAGIC:
        raise ValueError("not a fairnav checkpoint")
    (version,) = struct.unpack("<B", buf.read(1))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", buf.read(4))
    shapes: dict[str, tuple[int, ...]] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode()
        (ndim,) = struct.unpack("<B", buf.read(1))
        shapes[name] = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    return shapes


def bundle_from_bytes(blob: bytes, seed: int = 0) -> PolicyBundle:
    """Rebuild a PolicyBundle whose layer widths match a checkpoint."""
    shapes = read_checkpoint_shapes(blob)
    trunk = shapes["solitary_actor/net.trunk0.W"][1]
    head = shapes["solitary_actor/net.head.fc0.W"][1]
    feat = shapes["solitary_actor/net.head.fc1.W"][1]
    embed = shapes["enc_patience/enc.s0.q.W"][1]
    dup_patience = shapes["enc_patience/enc.s1.q.W"][0] == 3
    spec = MlpSpec(trunk=trunk, head=head, feat=feat, embed=embed)
    bundle = PolicyBundle(spec, seed=seed, dup_patience=dup_patience)
    bundle.load_bytes(blob)
    return bundle


def bundle_from_file(path, seed: int = 0) -> PolicyBundle:
    with open(path, "rb") as fh:
        return bundle_from_bytes(fh.read(), seed=seed)
