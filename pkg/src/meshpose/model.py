"""Cross-mesh attention network for pose transfer.

Two structured encoders lift the pose and identity meshes to per-vertex
embeddings; a stack of decoder blocks lets each pose vertex attend over
all identity vertices, gated by a learned scalar that starts at zero; a
tanh head emits the output coordinates. Per-vertex linear maps preserve
the vertex axis throughout, so the whole pipeline is equivariant under a
simultaneous permutation of both input meshes.
"""

import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mesh import Mesh, TopologyError

CHECKPOINT_MAGIC = b"GCTF"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _scaled(width, factor):
    return max(1, round(width * factor))


@dataclass(frozen=True)
class ModelConfig:
    encoder_channels: tuple = (3, 64, 128, 1024)
    decoder_channels: tuple = (1024, 512, 512, 256)
    num_decoders: int = 4
    desk_scale_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        if self.encoder_channels[0] != 3:
            raise ValueError("encoder input must be 3 channels (x, y, z)")
        if len(self.decoder_channels) != self.num_decoders:
            raise ValueError(
                f"{self.num_decoders} decoders need {self.num_decoders} widths, "
                f"got {self.decoder_channels}"
            )
        if self.decoder_channels[0] != self.encoder_channels[-1]:
            raise ValueError(
                "first decoder width must match the encoder output width"
            )
        if self.num_decoders < 1 or self.desk_scale_factor <= 0:
            raise ValueError("need >=1 decoder and a positive scale factor")
        if any(c < 1 for c in self.encoder_channels + self.decoder_channels):
            raise ValueError("channel widths must be positive")

    # hidden widths scale with the desk factor; the 3-channel I/O never does
    @property
    def scaled_encoder_channels(self):
        f = self.desk_scale_factor
        return (3,) + tuple(_scaled(c, f) for c in self.encoder_channels[1:])

    @property
    def scaled_decoder_channels(self):
        f = self.desk_scale_factor
        return tuple(_scaled(c, f) for c in self.decoder_channels)


# the 3-decoder variant used for latent-space regularization of a test set
LIR_DECODER_CHANNELS = (1024, 512, 256)


def lir_config(desk_scale_factor=1.0):
    return ModelConfig(
        decoder_channels=LIR_DECODER_CHANNELS,
        num_decoders=3,
        desk_scale_factor=desk_scale_factor,
    )


@dataclass
class EncoderParams:
    layers: list  # [(weight, bias)] per per-vertex linear stage


@dataclass
class NormBlockParams:
    scale_weight: "ad.Tensor"
    scale_bias: "ad.Tensor"
    bias_weight: "ad.Tensor"
    bias_bias: "ad.Tensor"


@dataclass
class DecoderParams:
    query: tuple
    key: tuple
    value: tuple
    gamma: "ad.Tensor"
    norms: list  # three NormBlockParams
    stages: list  # three (weight, bias) per-vertex linear stages


@dataclass
class ModelParams:
    config: ModelConfig
    encoder_identity: EncoderParams
    encoder_pose: EncoderParams
    reducers: list  # [(identity (w, b), pose (w, b))] per decoder
    decoders: list
    head: tuple

    @property
    def dtype(self):
        return self.head[0].dtype


@dataclass
class LatentEmbedding:
    """Per-vertex feature matrix (channels x vertices) plus its source role."""

    values: "ad.Tensor"
    role: str

    @property
    def vertex_count(self):
        return self.values.shape[1]


class _ParamFactory:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases."""

    def __init__(self, seed, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def linear(self, c_out, c_in):
        a = np.sqrt(1.0 / c_in)
        w = self.rng.uniform(-a, a, (c_out, c_in)).astype(self.dtype)
        b = np.zeros(c_out, dtype=self.dtype)
        return ad.Tensor(w), ad.Tensor(b)

    def norm_block(self, channels):
        sw, sb = self.linear(channels, 3)
        bw, bb = self.linear(channels, 3)
        return NormBlockParams(sw, sb, bw, bb)

    def decoder(self, channels):
        return DecoderParams(
            query=self.linear(channels, channels),
            key=self.linear(channels, channels),
            value=self.linear(channels, channels),
            gamma=ad.Tensor(np.zeros((), dtype=self.dtype)),
            norms=[self.norm_block(channels) for _ in range(3)],
            stages=[self.linear(channels, channels) for _ in range(3)],
        )


def init_params(config, seed, dtype=np.float32):
    """Deterministic parameter initialization; all attention gates start at 0."""
    fac = _ParamFactory(seed, dtype)
    enc = config.scaled_encoder_channels

    def encoder():
        return EncoderParams(
            [fac.linear(enc[i + 1], enc[i]) for i in range(len(enc) - 1)]
        )

    encoder_identity = encoder()
    encoder_pose = encoder()
    widths = config.scaled_decoder_channels
    reducers = []
    decoders = []
    prev = enc[-1]
    for w in widths:
        reducers.append((fac.linear(w, prev), fac.linear(w, prev)))
        decoders.append(fac.decoder(w))
        prev = w
    head = fac.linear(3, widths[-1])
    return ModelParams(
        config=config,
        encoder_identity=encoder_identity,
        encoder_pose=encoder_pose,
        reducers=reducers,
        decoders=decoders,
        head=head,
    )


def named_parameters(params):
    """(name, tensor) pairs in a fixed declaration order."""
    out = []

    def pair(prefix, wb):
        out.append((f"{prefix}.weight", wb[0]))
        out.append((f"{prefix}.bias", wb[1]))

    for enc_name, enc in (
        ("encoder_identity", params.encoder_identity),
        ("encoder_pose", params.encoder_pose),
    ):
        for i, wb in enumerate(enc.layers):
            pair(f"{enc_name}.layer{i}", wb)
    for i, (id_wb, pose_wb) in enumerate(params.reducers):
        pair(f"reduce{i}.identity", id_wb)
        pair(f"reduce{i}.pose", pose_wb)
    for i, dec in enumerate(params.decoders):
        pair(f"decoder{i}.query", dec.query)
        pair(f"decoder{i}.key", dec.key)
        pair(f"decoder{i}.value", dec.value)
        out.append((f"decoder{i}.gamma", dec.gamma))
        for j, nb in enumerate(dec.norms):
            pair(f"decoder{i}.norm{j}.scale", (nb.scale_weight, nb.scale_bias))
            pair(f"decoder{i}.norm{j}.bias", (nb.bias_weight, nb.bias_bias))
        for j, wb in enumerate(dec.stages):
            pair(f"decoder{i}.stage{j}", wb)
    pair("head", params.head)
    return out


def mesh_to_tensor(mesh, dtype):
    """Coordinates as a 3 x V tensor in the network's channel layout."""
    return ad.Tensor(np.ascontiguousarray(mesh.vertices.T, dtype=dtype))


def _encode_t(x, enc_params):
    h = x
    for w, b in enc_params.layers:
        h = ad.activation(ad.instance_norm(ad.per_vertex_linear(h, w, b)), "relu")
    return h


def encode(mesh, enc_params, role="pose"):
    """Lift a normalized mesh to its per-vertex latent embedding.

    The vertex axis is untouched (no pooling), so column v of the result
    belongs to vertex v of the input.
    """
    if role not in ("pose", "identity"):
        raise ValueError(f"role must be 'pose' or 'identity', got {role!r}")
    dtype = enc_params.layers[0][0].dtype
    return LatentEmbedding(_encode_t(mesh_to_tensor(mesh, dtype), enc_params), role)


def cross_attention(z_pose, z_id, dec_params, collect_attention=None):
    """Refine the pose embedding by attending over the identity embedding.

    Queries come from the pose embedding; keys and values from the
    identity embedding. Each query row of the attention matrix is a
    distribution over identity vertices. The gated result is added back
    onto the pose embedding, so a zero gate passes it through untouched.
    """
    if z_pose.vertex_count != z_id.vertex_count:
        raise ad.DimensionError(
            f"cross_attention: vertex counts differ "
            f"({z_pose.vertex_count} vs {z_id.vertex_count})"
        )
    q = ad.per_vertex_linear(z_pose.values, *dec_params.query)
    k = ad.per_vertex_linear(z_id.values, *dec_params.key)
    v = ad.per_vertex_linear(z_id.values, *dec_params.value)
    scores = ad.batched_matmul(ad.transpose(q), k)
    att = ad.softmax_over_keys(scores)
    if collect_attention is not None:
        collect_attention.append(att)
    mixed = ad.batched_matmul(v, ad.transpose(att))
    out = ad.scale_and_add(mixed, dec_params.gamma, z_pose.values)
    return LatentEmbedding(out, z_pose.role)


def _norm_block_t(z, cond, nb):
    zhat = ad.instance_norm(z)
    s = ad.per_vertex_linear(cond, nb.scale_weight, nb.scale_bias)
    b = ad.per_vertex_linear(cond, nb.bias_weight, nb.bias_bias)
    return ad.add(ad.multiply(s, zhat), b)


def norm_block(z, cond_mesh, nb):
    """Instance-normalize, then modulate per vertex from the conditioning mesh."""
    if z.vertex_count != cond_mesh.vertex_count:
        raise ad.DimensionError(
            f"norm_block: embedding has {z.vertex_count} vertices, "
            f"conditioning mesh {cond_mesh.vertex_count}"
        )
    cond = mesh_to_tensor(cond_mesh, z.values.dtype)
    return LatentEmbedding(_norm_block_t(z.values, cond, nb), z.role)


def _decoder_block_t(z_pose, z_id, cond, dec, collect_attention=None, attend=True):
    if attend:
        refined = cross_attention(z_pose, z_id, dec, collect_attention)
    else:
        refined = z_pose
    z = refined.values

    def stage(x, idx):
        h = _norm_block_t(x, cond, dec.norms[idx])
        h = ad.per_vertex_linear(h, *dec.stages[idx])
        return ad.activation(h, "relu")

    branch_a = stage(stage(z, 0), 1)
    branch_b = stage(z, 2)
    return LatentEmbedding(ad.add(branch_a, branch_b), refined.role)


def decoder_block(z_pose, z_id, cond_mesh, dec_params, attend=True,
                  collect_attention=None):
    """One attention block plus its two conditioned feed-forward branches.

    The conditioning mesh is the identity mesh throughout. ``attend=False``
    excises the attention branch, which equals the ``gamma == 0`` behavior.
    """
    cond = mesh_to_tensor(cond_mesh, z_pose.values.dtype)
    return _decoder_block_t(
        z_pose, z_id, cond, dec_params, collect_attention, attend
    )


def forward_vertices(identity_mesh, pose_mesh, params, attend=True,
                     collect_attention=None):
    """Run the network; returns output coordinates as a V x 3 tensor.

    Both meshes must share one face list and already sit in the identity
    mesh's normalization frame. The output vertex order follows the pose
    mesh (the attention result rides on the pose embedding).
    """
    if not identity_mesh.same_topology(pose_mesh):
        raise TopologyError("identity and pose meshes do not share topology")
    dtype = params.dtype
    cond = mesh_to_tensor(identity_mesh, dtype)
    h_id = _encode_t(mesh_to_tensor(identity_mesh, dtype), params.encoder_identity)
    h_pose = _encode_t(mesh_to_tensor(pose_mesh, dtype), params.encoder_pose)
    for (id_wb, pose_wb), dec in zip(params.reducers, params.decoders):
        h_id = ad.per_vertex_linear(h_id, *id_wb)
        h_pose = ad.per_vertex_linear(h_pose, *pose_wb)
        h_pose = _decoder_block_t(
            LatentEmbedding(h_pose, "pose"),
            LatentEmbedding(h_id, "identity"),
            cond,
            dec,
            collect_attention,
            attend,
        ).values
    out = ad.activation(ad.per_vertex_linear(h_pose, *params.head), "tanh")
    return ad.transpose(out)


def forward(identity_mesh, pose_mesh, params, attend=True):
    """Pose transfer in the normalized frame; returns a Mesh.

    Inference only: runs off-tape and reuses the shared face list.
    """
    out = forward_vertices(identity_mesh, pose_mesh, params, attend=attend)
    return Mesh(out.data.astype(np.float64), pose_mesh.faces)


# ---------------------------------------------------------------------------
# checkpoint I/O: framed binary, little-endian float32 tensors


def _config_record(config):
    return {
        "encoder_channels": list(config.encoder_channels),
        "decoder_channels": list(config.decoder_channels),
        "num_decoders": config.num_decoders,
        "desk_scale_factor": config.desk_scale_factor,
    }


def save_checkpoint(path, params):
    """Write magic, version, config record, then tensors in declaration order.

    A sidecar ``<path>.manifest`` lists tensor names and payload checksums.
    """
    named = named_parameters(params)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg = json.dumps(_config_record(params.config), sort_keys=True).encode("ascii")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    manifest = []
    for name, tensor in named:
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(tensor.data, dtype="<f4")
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes()
        buf.write(payload)
        manifest.append(f"{name}\t{hashlib.sha256(payload).hexdigest()}")
    with open(path, "wb") as f:
        f.write(buf.getvalue())
    with open(f"{path}.manifest", "w", encoding="ascii") as f:
        f.write("\n".join(manifest) + "\n")


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    (cfg_len,) = struct.unpack("<I", buf.read(4))
    record = json.loads(buf.read(cfg_len).decode("ascii"))
    config = ModelConfig(
        encoder_channels=tuple(record["encoder_channels"]),
        decoder_channels=tuple(record["decoder_channels"]),
        num_decoders=record["num_decoders"],
        desk_scale_factor=record["desk_scale_factor"],
    )
    params = init_params(config, seed=0, dtype=np.float32)
    for name, tensor in named_parameters(params):
        header = buf.read(4)
        if len(header) < 4:
            raise CheckpointError(f"{path}: truncated before tensor {name}")
        (ndim,) = struct.unpack("<I", header)
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        payload = buf.read(4 * count)
        if len(payload) < 4 * count:
            raise CheckpointError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {arr.shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = arr.astype(np.float32)
    if buf.read(1):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return params
