"""Toy volumetric decoder: patch embedding, hybrid token sequence, and a
pre-norm transformer whose selection layer exposes queries/keys to a hook.

The hook may replace the running hidden states (compress tokens, zero a
row, ...); everything after the selection layer consumes what it returns.
Answer logits are read from the last instruction-token position.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .kernels.op import FlopCounter, attention, count_matmul
from .numerics import autodiff as ad
from .numerics.autodiff import DualTensor, Tape, dual


@dataclass
class VolumeSpec:
    """Voxel counts plus patch/merge geometry for one input volume."""

    depth: int
    height: int
    width: int
    patch: int = 14
    stride: int = 2

    def __post_init__(self):
        for name in ("depth", "height", "width"):
            if getattr(self, name) % self.patch != 0:
                raise ConfigError(f"{name} not divisible by patch={self.patch}")
        for name in ("height", "width"):
            if (getattr(self, name) // self.patch) % self.stride != 0:
                raise ConfigError(
                    f"in-plane patch count of {name} not divisible by stride={self.stride}"
                )

    @property
    def depth_tokens(self) -> int:
        return self.depth // self.patch

    @property
    def grid_rows(self) -> int:
        return (self.height // self.patch) // self.stride

    @property
    def grid_cols(self) -> int:
        return (self.width // self.patch) // self.stride

    @property
    def n_visual(self) -> int:
        return self.depth_tokens * self.grid_rows * self.grid_cols

    @property
    def block_voxels(self) -> int:
        return self.patch * (self.stride * self.patch) ** 2


@dataclass
class DecoderConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    selection_layer: int = 1
    vocab: int = 16
    saliency_heads: str = "first"  # or "mean"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if not 0 <= self.selection_layer < self.n_layers:
            raise ConfigError("selection_layer out of range")
        if self.saliency_heads not in ("first", "mean"):
            raise ConfigError("saliency_heads must be 'first' or 'mean'")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class TokenSequence:
    """Hybrid visual + instruction hidden states with position metadata.

    Visual tokens come first (rows 0..n_visual), instruction tokens after.
    ``active`` flags which of the ORIGINAL visual tokens are present in
    this view; removed tokens keep their neighbours' positions untouched.
    """

    hidden: DualTensor
    vis_positions: np.ndarray  # (n_visual, 3) grid triples of surviving tokens
    txt_positions: np.ndarray  # (n_instruction,) sequential indices
    n_visual: int
    n_instruction: int
    active: np.ndarray  # bool over the original visual tokens

    def __post_init__(self):
        if self.hidden.value.shape[0] != self.n_visual + self.n_instruction:
            raise ShapeError("hidden row count != n_visual + n_instruction")


def positional_indices(spec: VolumeSpec, n_instruction: int):
    """Grid triples for visual tokens, then sequential indices for
    instruction tokens continuing after the visual block."""
    d, r, c = spec.depth_tokens, spec.grid_rows, spec.grid_cols
    grid = np.stack(np.meshgrid(np.arange(d), np.arange(r), np.arange(c),
                                indexing="ij"), axis=-1)
    vis = grid.reshape(-1, 3).astype(np.int64)
    txt = np.arange(spec.n_visual, spec.n_visual + n_instruction, dtype=np.int64)
    return vis, txt


def patch_blocks(volume: np.ndarray, spec: VolumeSpec) -> np.ndarray:
    """Flatten each non-overlapping patch block (stride x stride in-plane
    merge, no depth merge) into a row; row order is (depth, row, col)."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.shape != (spec.depth, spec.height, spec.width):
        raise ConfigError(
            f"volume shape {volume.shape} != spec {(spec.depth, spec.height, spec.width)}"
        )
    p, s = spec.patch, spec.stride
    d, r, c = spec.depth_tokens, spec.grid_rows, spec.grid_cols
    blocks = volume.reshape(d, p, r, s * p, c, s * p)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks.reshape(spec.n_visual, -1))


def patchify(tape, volume: np.ndarray, spec: VolumeSpec,
             embed_w: DualTensor, embed_b: Optional[DualTensor] = None) -> TokenSequence:
    """Embed the volume into its visual token sequence (no instruction part)."""
    blocks = dual(patch_blocks(volume, spec))
    vis = ad.matmul(tape, blocks, embed_w)
    if embed_b is not None:
        vis = ad.add_bias(tape, vis, embed_b)
    vis_pos, txt_pos = positional_indices(spec, 0)
    return TokenSequence(
        hidden=vis,
        vis_positions=vis_pos,
        txt_positions=txt_pos,
        n_visual=spec.n_visual,
        n_instruction=0,
        active=np.ones(spec.n_visual, dtype=bool),
    )


@dataclass
class SelectionContext:
    """What the selection-layer hook receives."""

    tape: Optional[Tape]
    hidden: DualTensor
    n_visual: int
    n_instruction: int
    q_instr: DualTensor  # (n_instruction, d_model), all heads concatenated
    k_instr: DualTensor
    k_vis: DualTensor    # (n_visual, d_model)
    n_heads: int
    head_dim: int
    vis_positions: np.ndarray
    txt_positions: np.ndarray
    counter: Optional[FlopCounter]


@dataclass
class SelectionResult:
    """What a hook returns: the sequence the remaining layers consume."""

    hidden: DualTensor
    n_visual: int
    vis_positions: np.ndarray
    active: np.ndarray
    info: object = None


@dataclass
class ForwardResult:
    logits: DualTensor
    selection: Optional[SelectionResult]
    layer_tokens: list
    layer_inputs: Optional[list] = None


Hook = Callable[[SelectionContext], Optional[SelectionResult]]

_LAYER_PARAMS = (
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
    "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.g", "ln2.b", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


class ToyDecoder:
    """Minimal pre-norm transformer over the hybrid token sequence."""

    def __init__(self, cfg: DecoderConfig, spec: VolumeSpec, txt_vocab: int,
                 max_instr: int, params: Optional[dict] = None,
                 rng: Optional[np.random.Generator] = None,
                 init_std: float = 0.05):
        self.cfg = cfg
        self.spec = spec
        self.txt_vocab = txt_vocab
        self.max_instr = max_instr
        if params is None:
            params = self._init_params(rng or np.random.default_rng(0), init_std)
        self.params = params

    def _init_params(self, rng: np.random.Generator, std: float) -> dict:
        d = self.cfg.d_model
        spec = self.spec
        shapes = {
            "embed.w": (spec.block_voxels, d),
            "embed.b": (d,),
            "txt.embed": (self.txt_vocab, d),
            "pos.depth": (spec.depth_tokens, d),
            "pos.row": (spec.grid_rows, d),
            "pos.col": (spec.grid_cols, d),
            "pos.text": (self.max_instr, d),
        }
        for i in range(self.cfg.n_layers):
            for name in _LAYER_PARAMS:
                key = f"layers.{i}.{name}"
                if name.startswith("ln"):
                    shapes[key] = (d,)
                elif name == "mlp.w1":
                    shapes[key] = (d, 4 * d)
                elif name == "mlp.b1":
                    shapes[key] = (4 * d,)
                elif name == "mlp.w2":
                    shapes[key] = (4 * d, d)
                elif name in ("mlp.b2",) or name.startswith("attn.b"):
                    shapes[key] = (d,)
                else:
                    shapes[key] = (d, d)
        shapes["lnf.g"] = (d,)
        shapes["lnf.b"] = (d,)
        shapes["head.w"] = (d, self.cfg.vocab)
        shapes["head.b"] = (self.cfg.vocab,)

        params = {}
        for name in sorted(shapes):
            shape = shapes[name]
            if name.endswith(".g"):
                params[name] = dual(np.ones(shape))
            elif name.endswith((".b", ".b1", ".b2")) or ".b" in name.rsplit(".", 1)[-1]:
                params[name] = dual(np.zeros(shape))
            else:
                params[name] = dual(rng.normal(0.0, std, size=shape))
        return params

    def param_values(self) -> dict:
        return {k: v.value for k, v in self.params.items()}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- embedding ---------------------------------------------------------

    def embed_case(self, tape, volume: np.ndarray, instr_ids: np.ndarray) -> TokenSequence:
        instr_ids = np.asarray(instr_ids, dtype=np.int64)
        if instr_ids.size > self.max_instr:
            raise ConfigError("instruction longer than positional table")
        p = self.params
        seq = patchify(tape, volume, self.spec, p["embed.w"], p["embed.b"])
        pos = ad.gather_rows(tape, p["pos.depth"], seq.vis_positions[:, 0])
        pos = ad.add(tape, pos, ad.gather_rows(tape, p["pos.row"], seq.vis_positions[:, 1]))
        pos = ad.add(tape, pos, ad.gather_rows(tape, p["pos.col"], seq.vis_positions[:, 2]))
        vis = ad.add(tape, seq.hidden, pos)

        txt = ad.gather_rows(tape, p["txt.embed"], instr_ids)
        txt = ad.add(tape, txt, ad.gather_rows(tape, p["pos.text"], np.arange(instr_ids.size)))
        hidden = ad.concat_rows(tape, vis, txt)
        vis_pos, txt_pos = positional_indices(self.spec, instr_ids.size)
        return TokenSequence(
            hidden=hidden,
            vis_positions=vis_pos,
            txt_positions=txt_pos,
            n_visual=self.spec.n_visual,
            n_instruction=int(instr_ids.size),
            active=np.ones(self.spec.n_visual, dtype=bool),
        )

    # -- forward -----------------------------------------------------------

    def _linear(self, tape, x, w, b, counter):
        count_matmul(counter, x.value.shape[0], w.value.shape[1], w.value.shape[0])
        return ad.add_bias(tape, ad.matmul(tape, x, w), b)

    def _block(self, tape, x, i, counter):
        p = self.params
        pre = f"layers.{i}."
        xn = ad.layer_norm(tape, x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = self._linear(tape, xn, p[pre + "attn.wq"], p[pre + "attn.bq"], counter)
        k = self._linear(tape, xn, p[pre + "attn.wk"], p[pre + "attn.bk"], counter)
        v = self._linear(tape, xn, p[pre + "attn.wv"], p[pre + "attn.bv"], counter)
        att = attention(tape, q, k, v, self.cfg.n_heads, counter)
        proj = self._linear(tape, att, p[pre + "attn.wo"], p[pre + "attn.bo"], counter)
        x = ad.add(tape, x, proj)
        yn = ad.layer_norm(tape, x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h1 = ad.gelu(tape, self._linear(tape, yn, p[pre + "mlp.w1"], p[pre + "mlp.b1"], counter))
        h2 = self._linear(tape, h1, p[pre + "mlp.w2"], p[pre + "mlp.b2"], counter)
        return ad.add(tape, x, h2)

    def _selection_context(self, tape, hidden, n_vis, n_txt, vis_pos, txt_pos, counter):
        p = self.params
        pre = f"layers.{self.cfg.selection_layer}."
        xn = ad.layer_norm(tape, hidden, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = self._linear(tape, xn, p[pre + "attn.wq"], p[pre + "attn.bq"], counter)
        k = self._linear(tape, xn, p[pre + "attn.wk"], p[pre + "attn.bk"], counter)
        t = n_vis + n_txt
        return SelectionContext(
            tape=tape,
            hidden=hidden,
            n_visual=n_vis,
            n_instruction=n_txt,
            q_instr=ad.slice_rows(tape, q, n_vis, t),
            k_instr=ad.slice_rows(tape, k, n_vis, t),
            k_vis=ad.slice_rows(tape, k, 0, n_vis),
            n_heads=self.cfg.n_heads,
            head_dim=self.cfg.head_dim,
            vis_positions=vis_pos,
            txt_positions=txt_pos,
            counter=counter,
        )

    def forward(self, tape, seq: TokenSequence, hook: Optional[Hook] = None,
                counter: Optional[FlopCounter] = None,
                capture_inputs: bool = False) -> ForwardResult:
        hidden = seq.hidden
        n_vis, n_txt = seq.n_visual, seq.n_instruction
        vis_pos, txt_pos = seq.vis_positions, seq.txt_positions
        selection = None
        layer_tokens = []
        layer_inputs = [] if capture_inputs else None
        for i in range(self.cfg.n_layers):
            if counter is not None:
                counter.enter_layer(i)
            if i == self.cfg.selection_layer and hook is not None:
                ctx = self._selection_context(tape, hidden, n_vis, n_txt,
                                              vis_pos, txt_pos, counter)
                result = hook(ctx)
                if result is not None:
                    selection = result
                    hidden = result.hidden
                    n_vis = result.n_visual
                    vis_pos = result.vis_positions
            if capture_inputs:
                layer_inputs.append(hidden.value.copy())
            layer_tokens.append(hidden.value.shape[0])
            hidden = self._block(tape, hidden, i, counter)

        p = self.params
        fn = ad.layer_norm(tape, hidden, p["lnf.g"], p["lnf.b"])
        last = ad.slice_rows(tape, fn, fn.value.shape[0] - 1, fn.value.shape[0])
        logits2d = ad.add_bias(tape, ad.matmul(tape, last, p["head.w"]), p["head.b"])
        count_matmul(counter, 1, self.cfg.vocab, self.cfg.d_model)
        logits = ad.slice_rows(tape, logits2d, 0, 1)
        # flatten the (1, vocab) row into a vector
        flat = ad.dual(logits.value[0].copy())
        if tape is not None:
            def bwd(src=logits, dst=flat):
                src.grad[0] += dst.grad
            tape.record(bwd)
        return ForwardResult(logits=flat, selection=selection,
                             layer_tokens=layer_tokens, layer_inputs=layer_inputs)


def zero_row_hook(j: int) -> Hook:
    """Ablation hook: zero visual row ``j`` at the selection layer without
    removing any token."""

    def hook(ctx: SelectionContext) -> SelectionResult:
        weights = np.ones(ctx.hidden.value.shape[0])
        weights[j] = 0.0
        hidden = ad.scale_rows(ctx.tape, ctx.hidden, weights)
        return SelectionResult(
            hidden=hidden,
            n_visual=ctx.n_visual,
            vis_positions=ctx.vis_positions,
            active=np.ones(ctx.n_visual, dtype=bool),
            info=None,
        )

    return hook
