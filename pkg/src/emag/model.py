"""Forecasting networks: the multimodal transformer and an LSTM
encoder-decoder baseline.

The transformer tokenizes each modality per observed frame into a shared
channel width, adds learnable modal embeddings and fixed time encodings,
and runs full attention over the token grid.  Two autoregressive decoders
read the last observed frame's encoded tokens through cross-attention: one
emits both hands' future positions, the other future frame-to-frame camera
homographies.  Missing detections are zeroed at entry and hidden from
attention, so their stored values cannot influence any output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .nn import (
    DecoderBlock,
    EncoderBlock,
    LSTMCell,
    Linear,
    MlpHead,
    causal_bias,
    key_padding_bias,
    sinusoidal_encoding,
)
from .tensor import Module, Parameter, Tensor, concat, where


@dataclass
class ModelConfig:
    channels: int = 512
    blocks: int = 2
    heads: int = 8
    dropout: float = 0.1
    observed_steps: int = 8
    future_steps: int = 4
    num_objects: int = 2
    rgb_dim: int = 32
    flow_dim: int = 32
    use_objects: bool = True
    use_rgb: bool = True
    use_flow: bool = True
    use_ego: bool = True
    # False: decoders cross-attend only to the last observed frame's hand
    # (resp. ego) tokens; True: to the whole encoded grid.
    full_decoder_memory: bool = False
    future_time_encoding: bool = True
    seed: int = 0

    @property
    def modalities(self):
        return (
            2
            + self.num_objects * self.use_objects
            + self.use_rgb
            + self.use_flow
            + self.use_ego
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def count_parameters(cfg):
    """Closed-form parameter count for a ModelConfig.

    Per encoder block 12C^2 + 13C, per decoder block 16C^2 + 19C; the box
    tokenizer is shared by hand and object tokens; each decoder adds a
    start query, an output re-embedding, and its MLP head.
    """
    C = cfg.channels
    total = 4 * C + C  # box tokenizer
    if cfg.use_rgb:
        total += cfg.rgb_dim * C + C
    if cfg.use_flow:
        total += cfg.flow_dim * C + C
    if cfg.use_ego:
        total += 9 * C + C
    total += cfg.modalities * C  # modal embeddings
    total += cfg.blocks * (12 * C * C + 13 * C)
    dec_block = 16 * C * C + 19 * C
    total += cfg.blocks * dec_block + C + (4 * C + C) + (C * C + C + 4 * C + 4)
    if cfg.use_ego:
        total += cfg.blocks * dec_block + C + (9 * C + C) + (C * C + C + 9 * C + 9)
    return total


def prepare_batch(samples, stats=None, config=None):
    """Stack samples into arrays the networks consume.

    Ego, appearance, and flow channels are standardized with `stats` when
    given; hand targets stay in normalized image coordinates.  Missing
    detections become zeros with a zero mask entry.
    """
    B = len(samples)
    first = samples[0]
    T, F = first.observed_steps, first.future_steps
    k = first.object_boxes.shape[1]
    if config is not None and (T, F) != (config.observed_steps, config.future_steps):
        raise ValueError(
            f"samples cover {T}+{F} steps but the model expects "
            f"{config.observed_steps}+{config.future_steps}"
        )

    hand_boxes = np.zeros((B, 2, T, 4))
    hand_points = np.zeros((B, 2, T, 2))
    hand_mask = np.zeros((B, 2, T))
    object_boxes = np.zeros((B, k, T, 4))
    rgb = np.zeros((B, T, first.rgb.shape[1]))
    flow = np.zeros((B, T, first.flow.shape[1]))
    ego = np.zeros((B, T, 9))
    future_ego = np.zeros((B, F, 9))
    target = np.zeros((B, 4 * F))
    target_mask = np.zeros((B, 4 * F))
    last_positions = np.full((B, 4), 0.5)

    for i, s in enumerate(samples):
        for side, (points, boxes) in enumerate(
            ((s.left, s.left_boxes), (s.right, s.right_boxes))
        ):
            for t in range(T):
                if points[t] is None:
                    continue
                hand_points[i, side, t] = points[t]
                hand_boxes[i, side, t] = boxes[t]
                hand_mask[i, side, t] = 1.0
                last_positions[i, 2 * side : 2 * side + 2] = points[t]
        object_boxes[i] = s.object_boxes.transpose(1, 0, 2)
        rgb[i] = s.rgb
        flow[i] = s.flow
        ego[i] = s.ego
        future_ego[i] = s.future_ego
        target[i], target_mask[i] = s.future_targets()

    if stats is not None:
        rgb = (rgb - stats.rgb.mean) / stats.rgb.std
        flow = (flow - stats.flow.mean) / stats.flow.std
        ego = (ego - stats.ego.mean) / stats.ego.std
        future_ego = (future_ego - stats.ego.mean) / stats.ego.std

    return {
        "hand_boxes": hand_boxes,
        "hand_points": hand_points,
        "hand_mask": hand_mask,
        "object_boxes": object_boxes,
        "rgb": rgb,
        "flow": flow,
        "ego": ego,
        "future_ego": future_ego.reshape(B, 9 * F),
        "target": target,
        "target_mask": target_mask,
        "last_positions": last_positions,
        "sequence_ids": [s.sequence_id for s in samples],
        "domains": [s.domain for s in samples],
    }


class EmagNet(Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        C = config.channels
        init = np.random.default_rng(config.seed)
        self.rng = np.random.default_rng(config.seed + 1)

        self.box_embed = Linear(4, C, init)
        self.rgb_embed = Linear(config.rgb_dim, C, init) if config.use_rgb else None
        self.flow_embed = Linear(config.flow_dim, C, init) if config.use_flow else None
        self.ego_embed = Linear(9, C, init) if config.use_ego else None
        # Unit-std learnable tokens sit at the same norm as the sinusoidal
        # time encodings, so neither drowns the other in the residual stream.
        self.modal_embed = Parameter(
            init.normal(0.0, 1.0, size=(config.modalities, C)), decay=False
        )
        self.encoder_blocks = [
            EncoderBlock(C, config.heads, init, config.dropout)
            for _ in range(config.blocks)
        ]
        self.hand_query = Parameter(init.normal(0.0, 1.0, size=C), decay=False)
        self.hand_out_embed = Linear(4, C, init)
        self.hand_decoder_blocks = [
            DecoderBlock(C, config.heads, init, config.dropout)
            for _ in range(config.blocks)
        ]
        self.hand_head = MlpHead(C, 4, init, config.dropout)
        if config.use_ego:
            self.ego_query = Parameter(init.normal(0.0, 1.0, size=C), decay=False)
            self.ego_out_embed = Linear(9, C, init)
            self.ego_decoder_blocks = [
                DecoderBlock(C, config.heads, init, config.dropout)
                for _ in range(config.blocks)
            ]
            self.ego_head = MlpHead(C, 9, init, config.dropout)
        else:
            self.ego_query = None
            self.ego_out_embed = None
            self.ego_decoder_blocks = []
            self.ego_head = None

        horizon = config.observed_steps + config.future_steps
        self.time_table = sinusoidal_encoding(np.arange(horizon), C)

    def encode(self, batch):
        """Token grid -> encoded grid.

        Returns (encoded (B, M*T, C), presence (B, M*T)).  Rows are ordered
        left hand, right hand, objects, appearance, flow, ego; within a row
        time runs 0..T-1.  Masked tokens are zeroed before the first block
        and hidden from every attention, so perturbing their raw inputs
        cannot change any output.
        """
        cfg = self.config
        T = cfg.observed_steps
        C = cfg.channels
        B = batch["hand_boxes"].shape[0]

        rows = []
        presence = []
        hand_tok = self.box_embed(Tensor(batch["hand_boxes"]))
        rows.append(hand_tok.reshape(B, 2 * T, C))
        presence.append(batch["hand_mask"].reshape(B, 2 * T))
        if cfg.use_objects:
            obj_tok = self.box_embed(Tensor(batch["object_boxes"]))
            rows.append(obj_tok.reshape(B, cfg.num_objects * T, C))
            presence.append(np.ones((B, cfg.num_objects * T)))
        if cfg.use_rgb:
            rows.append(self.rgb_embed(Tensor(batch["rgb"])))
            presence.append(np.ones((B, T)))
        if cfg.use_flow:
            rows.append(self.flow_embed(Tensor(batch["flow"])))
            presence.append(np.ones((B, T)))
        if cfg.use_ego:
            rows.append(self.ego_embed(Tensor(batch["ego"])))
            presence.append(np.ones((B, T)))

        # One table add and one mask multiply over the whole grid instead of
        # per-modality passes.
        table = self.modal_embed.reshape(cfg.modalities, 1, C) + self.time_table[:T]
        x = concat(rows, axis=1) + table.reshape(cfg.modalities * T, C)
        present = np.concatenate(presence, axis=1)
        x = x * present[:, :, None]

        bias = key_padding_bias(present)
        for block in self.encoder_blocks:
            x = block(x, attn_bias=bias, rng=self.rng)
        return x, present

    def _decode(self, memory, cross_bias, start, blocks, head, out_embed, out_dim):
        cfg = self.config
        B = memory.shape[0]
        C = cfg.channels
        acc = [start.reshape(1, 1, C) + np.zeros((B, 1, C))]
        outs = []
        for j in range(cfg.future_steps):
            x = concat(acc, axis=1)
            self_bias = causal_bias(j + 1)
            for block in blocks:
                x = block(
                    x, memory, self_bias=self_bias, cross_bias=cross_bias, rng=self.rng
                )
            y = head(x[:, -1], rng=self.rng)
            outs.append(y.reshape(B, 1, out_dim))
            if j + 1 < cfg.future_steps:
                token = out_embed(y).reshape(B, 1, C)
                if cfg.future_time_encoding:
                    token = token + self.time_table[cfg.observed_steps + j]
                acc.append(token)
        return concat(outs, axis=1).reshape(B, cfg.future_steps * out_dim)

    def _memory(self, encoded, present, row_indices):
        cfg = self.config
        T = cfg.observed_steps
        if cfg.full_decoder_memory:
            return encoded, key_padding_bias(present)
        # Last observed frame's tokens for the given modality rows.  A
        # masked slot still carries a usable summary: its zeroed query
        # attends uniformly, pooling the visible tokens.
        picks = [encoded[:, m * T + T - 1].reshape(-1, 1, cfg.channels) for m in row_indices]
        return concat(picks, axis=1), None

    def forward(self, batch, predict_ego=True):
        """Returns (hand (B, 4F), ego (B, 9F) or None)."""
        cfg = self.config
        encoded, present = self.encode(batch)
        memory, cross_bias = self._memory(encoded, present, (0, 1))
        hands = self._decode(
            memory,
            cross_bias,
            self.hand_query,
            self.hand_decoder_blocks,
            self.hand_head,
            self.hand_out_embed,
            4,
        )
        ego = None
        if predict_ego and cfg.use_ego:
            ego_row = cfg.modalities - 1
            memory, cross_bias = self._memory(encoded, present, (ego_row,))
            ego = self._decode(
                memory,
                cross_bias,
                self.ego_query,
                self.ego_decoder_blocks,
                self.ego_head,
                self.ego_out_embed,
                9,
            )
        return hands, ego

    __call__ = forward

    def predict(self, samples, stats=None, batch_size=64):
        """Hand forecasts as a (N, 4F) array, eval mode, no ego output."""
        self.eval()
        chunks = []
        for i in range(0, len(samples), batch_size):
            batch = prepare_batch(samples[i : i + batch_size], stats, self.config)
            hands, _ = self.forward(batch, predict_ego=False)
            chunks.append(hands.data)
        return np.concatenate(chunks, axis=0)


@dataclass
class Seq2SeqConfig:
    embed: int = 512
    hidden: int = 256
    observed_steps: int = 8
    future_steps: int = 4
    teacher_forcing: float = 0.5
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Seq2SeqNet(Module):
    """LSTM encoder over observed hand positions, LSTM decoder rolling out
    future positions with scheduled teacher forcing during training."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        init = np.random.default_rng(config.seed)
        self.rng = np.random.default_rng(config.seed + 1)
        self.in_embed = Linear(6, config.embed, init)
        self.encoder = LSTMCell(config.embed, config.hidden, init)
        self.dec_embed = Linear(4, config.embed, init)
        self.decoder = LSTMCell(config.embed, config.hidden, init)
        self.out = Linear(config.hidden, 4, init)

    def forward(self, batch, targets=None):
        cfg = self.config
        B = batch["hand_points"].shape[0]
        points = batch["hand_points"]
        mask = batch["hand_mask"]
        state = self.encoder.initial_state(B)
        for t in range(cfg.observed_steps):
            step = np.concatenate(
                [
                    points[:, 0, t],
                    mask[:, 0, t : t + 1],
                    points[:, 1, t],
                    mask[:, 1, t : t + 1],
                ],
                axis=1,
            )
            state = self.encoder(self.in_embed(Tensor(step)), state)

        prev = Tensor(batch["last_positions"])
        outs = []
        for f in range(cfg.future_steps):
            state = self.decoder(self.dec_embed(prev), state)
            pred = self.out(state[0])
            outs.append(pred.reshape(B, 1, 4))
            if f + 1 == cfg.future_steps:
                break
            prev = pred
            if (
                self.training
                and targets is not None
                and self.rng.random() < cfg.teacher_forcing
            ):
                step_target = targets["target"][:, 4 * f : 4 * f + 4]
                step_mask = targets["target_mask"][:, 4 * f : 4 * f + 4] > 0
                prev = where(step_mask, Tensor(step_target), pred)
        return concat(outs, axis=1).reshape(B, 4 * cfg.future_steps), None

    __call__ = forward

    def predict(self, samples, stats=None, batch_size=64):
        self.eval()
        chunks = []
        for i in range(0, len(samples), batch_size):
            batch = prepare_batch(samples[i : i + batch_size], stats, self.config)
            hands, _ = self.forward(batch)
            chunks.append(hands.data)
        return np.concatenate(chunks, axis=0)


class CheckpointError(ValueError):
    pass


_MODEL_TYPES = {
    "transformer": (EmagNet, ModelConfig),
    "seq2seq": (Seq2SeqNet, Seq2SeqConfig),
}


def model_type_name(model):
    for name, (cls, _) in _MODEL_TYPES.items():
        if isinstance(model, cls):
            return name
    raise CheckpointError(f"unknown model class {type(model).__name__}")


def save_checkpoint(path, model, stats=None, extra=None):
    """JSON checkpoint: config, standardization stats, and parameters.

    Floats are written with full repr precision, so loading reproduces the
    exact same values.
    """
    payload = {
        "format": "hand-forecast-checkpoint",
        "version": 1,
        "model_type": model_type_name(model),
        "config": model.config.to_dict(),
        "stats": stats.to_dict() if stats is not None else None,
        "parameters": {name: p.data.tolist() for name, p in model.named_parameters()},
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, separators=(",", ":"))


def load_checkpoint(path):
    """Returns (model, stats, payload); the model is in eval mode."""
    from .data import DatasetStats

    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    model_type = payload.get("model_type")
    if model_type not in _MODEL_TYPES:
        raise CheckpointError(f"unsupported model type {model_type!r}")
    cls, cfg_cls = _MODEL_TYPES[model_type]
    model = cls(cfg_cls.from_dict(payload["config"]))
    saved = payload["parameters"]
    for name, param in model.named_parameters():
        if name not in saved:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        values = np.asarray(saved[name], dtype=np.float64)
        if values.shape != param.data.shape:
            raise CheckpointError(
                f"parameter {name} has shape {values.shape}, expected {param.data.shape}"
            )
        param.data = values
    extra_names = set(saved) - {name for name, _ in model.named_parameters()}
    if extra_names:
        raise CheckpointError(f"checkpoint has unknown parameters: {sorted(extra_names)}")
    stats = DatasetStats.from_dict(payload["stats"]) if payload["stats"] else None
    model.eval()
    return model, stats, payload
