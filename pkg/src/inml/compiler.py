"""Model descriptions, quantization to table entries, and fitting.

A model arrives as a small text file (one `model` line, then `layer`,
`w`, `b` lines), gets validated into a ModelSpec, and is compiled into a
TableEntrySet: every weight and bias encoded to a raw Q-format int, plus
a metadata record with the shapes and activation codes a data plane needs
to wire lookups together.  Table entry files are plain text with one
entry per line so they can be diffed and inspected.

Fitting lives here too: fit_linear solves the regularized least-squares
problem directly from the normal equations so the result is reproducible
to the bit on any host, with no numeric libraries involved.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

from .approx import Activation, sigmoid_exact
from .fixedpoint import (
    I32_MAX,
    I32_MIN,
    MAX_SCALE_BITS,
    FixedPointFormat,
    encode,
)


class ModelParseError(ValueError):
    """A model file line that cannot be accepted, with its line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TableParseError(ValueError):
    """A table entry file line that cannot be accepted."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SaturationError(ValueError):
    """A parameter too large for the chosen format; quantizing it would
    silently pin the value to the int32 limit, so it is refused instead."""


class IllConditionedError(ValueError):
    """The normal equations have no unique solution."""


class DatasetError(ValueError):
    """A dataset CSV that does not match the expected schema."""


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: weights[neuron][input], one bias per neuron."""

    in_width: int
    out_width: int
    activation: Activation
    weights: tuple[tuple[float, ...], ...]
    biases: tuple[float, ...]

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError(
                f"layer widths must be positive, got in={self.in_width} out={self.out_width}"
            )
        if len(self.weights) != self.out_width:
            raise ValueError(
                f"expected {self.out_width} weight rows, got {len(self.weights)}"
            )
        for n, row in enumerate(self.weights):
            if len(row) != self.in_width:
                raise ValueError(
                    f"neuron {n}: expected {self.in_width} weights, got {len(row)}"
                )
            for i, w in enumerate(row):
                if not math.isfinite(w):
                    raise ValueError(f"weight [{n}][{i}] is not finite: {w!r}")
        if len(self.biases) != self.out_width:
            raise ValueError(
                f"expected {self.out_width} biases, got {len(self.biases)}"
            )
        for n, b in enumerate(self.biases):
            if not math.isfinite(b):
                raise ValueError(f"bias [{n}] is not finite: {b!r}")


@dataclass(frozen=True)
class ModelSpec:
    """A validated model: id, Q-format scale, and a chain of layers."""

    model_id: int
    scale_bits: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not 0 <= self.model_id <= 0xFFFF:
            raise ValueError(f"model id must fit in 16 bits, got {self.model_id}")
        if not 0 <= self.scale_bits <= MAX_SCALE_BITS:
            raise ValueError(
                f"scale must be in [0, {MAX_SCALE_BITS}], got {self.scale_bits}"
            )
        if not self.layers:
            raise ValueError("model has no layers")
        for idx in range(1, len(self.layers)):
            prev, cur = self.layers[idx - 1], self.layers[idx]
            if cur.in_width != prev.out_width:
                raise ValueError(
                    f"layer {idx} expects {cur.in_width} inputs but layer "
                    f"{idx - 1} produces {prev.out_width}"
                )

    @property
    def n_features(self) -> int:
        return self.layers[0].in_width

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].out_width


# ---------------------------------------------------------------------------
# Model file parsing and rendering


def parse_model(text: str) -> ModelSpec:
    """Parse a model description file into a ModelSpec.

    Grammar, one directive per line (`#` starts a comment anywhere):

        model <id> scale=<s>
        layer <idx> in=<n> out=<m> act=<linear|relu|leaky:<a>|sigmoid:<1|3|5>>
        w <neuron> <input> <value>
        b <neuron> <value>

    `w` and `b` lines attach to the most recent `layer`.  Cells never
    mentioned default to 0.0; mentioning one twice is an error.
    """
    model_id = None
    scale_bits = None
    # per layer: [activation, in, out, weights dict, biases dict]
    layers: list[list] = []

    def fail(line_no: int, msg: str):
        raise ModelParseError(line_no, msg)

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]

        if kind == "model":
            if model_id is not None:
                fail(line_no, "duplicate model line")
            if len(fields) != 3 or not fields[2].startswith("scale="):
                fail(line_no, "expected: model <id> scale=<s>")
            model_id = _parse_int(fields[1], line_no, "model id")
            scale_bits = _parse_int(fields[2][len("scale="):], line_no, "scale")
            if not 0 <= model_id <= 0xFFFF:
                fail(line_no, f"model id must fit in 16 bits, got {model_id}")
            if not 0 <= scale_bits <= MAX_SCALE_BITS:
                fail(line_no, f"scale must be in [0, {MAX_SCALE_BITS}], got {scale_bits}")
            continue

        if model_id is None:
            fail(line_no, f"{kind!r} before the model line")

        if kind == "layer":
            if len(fields) != 5:
                fail(line_no, "expected: layer <idx> in=<n> out=<m> act=<kind>")
            idx = _parse_int(fields[1], line_no, "layer index")
            if idx != len(layers):
                fail(line_no, f"expected layer {len(layers)}, got {idx}")
            in_w = _parse_kv_int(fields[2], "in", line_no)
            out_w = _parse_kv_int(fields[3], "out", line_no)
            if in_w < 1 or out_w < 1:
                fail(line_no, f"layer widths must be positive, got in={in_w} out={out_w}")
            if layers and in_w != layers[-1][2]:
                fail(
                    line_no,
                    f"layer {idx} expects {in_w} inputs but layer {idx - 1} "
                    f"produces {layers[-1][2]}",
                )
            if not fields[4].startswith("act="):
                fail(line_no, "expected act=<kind> as the last field")
            try:
                act = Activation.from_token(fields[4][len("act="):])
            except ValueError as exc:
                fail(line_no, str(exc))
            layers.append([act, in_w, out_w, {}, {}])
            continue

        if kind == "w":
            if not layers:
                fail(line_no, "'w' before any layer line")
            if len(fields) != 4:
                fail(line_no, "expected: w <neuron> <input> <value>")
            n = _parse_int(fields[1], line_no, "neuron")
            i = _parse_int(fields[2], line_no, "input index")
            val = _parse_float(fields[3], line_no)
            _, in_w, out_w, weights, _ = layers[-1]
            if not 0 <= n < out_w:
                fail(line_no, f"neuron {n} out of range for out={out_w}")
            if not 0 <= i < in_w:
                fail(line_no, f"input {i} out of range for in={in_w}")
            if (n, i) in weights:
                fail(line_no, f"duplicate weight for neuron {n} input {i}")
            weights[(n, i)] = val
            continue

        if kind == "b":
            if not layers:
                fail(line_no, "'b' before any layer line")
            if len(fields) != 3:
                fail(line_no, "expected: b <neuron> <value>")
            n = _parse_int(fields[1], line_no, "neuron")
            val = _parse_float(fields[2], line_no)
            _, _, out_w, _, biases = layers[-1]
            if not 0 <= n < out_w:
                fail(line_no, f"neuron {n} out of range for out={out_w}")
            if n in biases:
                fail(line_no, f"duplicate bias for neuron {n}")
            biases[n] = val
            continue

        fail(line_no, f"unknown directive {kind!r}")

    if model_id is None:
        raise ModelParseError(0, "missing model line")
    if not layers:
        raise ModelParseError(0, "model has no layers")

    built = []
    for act, in_w, out_w, weights, biases in layers:
        rows = tuple(
            tuple(weights.get((n, i), 0.0) for i in range(in_w))
            for n in range(out_w)
        )
        bias_row = tuple(biases.get(n, 0.0) for n in range(out_w))
        built.append(LayerSpec(in_w, out_w, act, rows, bias_row))
    return ModelSpec(model_id, scale_bits, tuple(built))


def render_model(spec: ModelSpec) -> str:
    """Render a ModelSpec back to model file text (parse round-trips)."""
    lines = [f"model {spec.model_id} scale={spec.scale_bits}"]
    for idx, layer in enumerate(spec.layers):
        lines.append(
            f"layer {idx} in={layer.in_width} out={layer.out_width} "
            f"act={layer.activation.token()}"
        )
        for n, row in enumerate(layer.weights):
            for i, w in enumerate(row):
                lines.append(f"w {n} {i} {w!r}")
        for n, b in enumerate(layer.biases):
            lines.append(f"b {n} {b!r}")
    return "\n".join(lines) + "\n"


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token, 10)
    except ValueError:
        raise ModelParseError(line_no, f"bad {what} {token!r}") from None


def _parse_kv_int(field: str, key: str, line_no: int) -> int:
    prefix = key + "="
    if not field.startswith(prefix):
        raise ModelParseError(line_no, f"expected {prefix}<int>, got {field!r}")
    return _parse_int(field[len(prefix):], line_no, key)


def _parse_float(token: str, line_no: int) -> float:
    try:
        val = float(token)
    except ValueError:
        raise ModelParseError(line_no, f"bad number {token!r}") from None
    if not math.isfinite(val):
        raise ModelParseError(line_no, f"value must be finite, got {token!r}")
    return val


# ---------------------------------------------------------------------------
# Quantization to table entries

# Per-layer activation records in table metadata.  First element names the
# kind; leaky carries its encoded slope, sigmoid its polynomial order.
ActCode = tuple


@dataclass(frozen=True)
class TableMeta:
    """Shape and activation metadata stored alongside a model's entries."""

    scale_bits: int
    widths: tuple[int, ...]  # input width, then each layer's output width
    activations: tuple[ActCode, ...]

    def __post_init__(self):
        if not 0 <= self.scale_bits <= MAX_SCALE_BITS:
            raise ValueError(
                f"scale must be in [0, {MAX_SCALE_BITS}], got {self.scale_bits}"
            )
        if len(self.widths) != len(self.activations) + 1:
            raise ValueError(
                f"{len(self.activations)} layers need {len(self.activations) + 1} "
                f"widths, got {len(self.widths)}"
            )
        if not self.activations:
            raise ValueError("metadata describes no layers")
        for w in self.widths:
            if w < 1:
                raise ValueError(f"widths must be positive, got {w}")
        for code in self.activations:
            _act_code_to_token(code)  # validates shape

    @property
    def n_layers(self) -> int:
        return len(self.activations)


@dataclass(frozen=True)
class TableEntrySet:
    """Everything one model installs: metadata plus raw weight/bias ints.

    Weights are keyed (model_id, layer, neuron, input), biases
    (model_id, layer, neuron), mirroring the match keys a data plane
    uses to look them up.
    """

    model_id: int
    meta: TableMeta | None
    weights: dict[tuple[int, int, int, int], int]
    biases: dict[tuple[int, int, int], int]


def _act_code_to_token(code: ActCode) -> str:
    if code == ("linear",):
        return "linear"
    if code == ("relu",):
        return "relu"
    if len(code) == 2 and code[0] == "leaky" and isinstance(code[1], int):
        return f"leaky:{code[1]}"
    if len(code) == 2 and code[0] == "sigmoid" and code[1] in (1, 3, 5):
        return f"sigmoid:{code[1]}"
    raise ValueError(f"bad activation code {code!r}")


def _act_code_from_token(token: str, line_no: int) -> ActCode:
    name, sep, arg = token.partition(":")
    if name == "linear" and not sep:
        return ("linear",)
    if name == "relu" and not sep:
        return ("relu",)
    try:
        if name == "leaky" and sep:
            raw = int(arg, 10)
            if not I32_MIN <= raw <= I32_MAX:
                raise ValueError
            return ("leaky", raw)
        if name == "sigmoid" and sep and arg in ("1", "3", "5"):
            return ("sigmoid", int(arg))
    except ValueError:
        pass
    raise TableParseError(line_no, f"bad activation code {token!r}")


def quantize_model(spec: ModelSpec, scale_bits: int | None = None) -> TableEntrySet:
    """Encode every parameter of a model at the given scale.

    Any parameter whose encoding would saturate int32 is refused with a
    SaturationError naming the offending cell: a silently pinned weight
    corrupts every inference, so it must never reach a table.
    """
    s = spec.scale_bits if scale_bits is None else scale_bits
    fmt = FixedPointFormat(s)
    mid = spec.model_id
    weights: dict[tuple[int, int, int, int], int] = {}
    biases: dict[tuple[int, int, int], int] = {}
    acts: list[ActCode] = []

    for l, layer in enumerate(spec.layers):
        for n, row in enumerate(layer.weights):
            for i, w in enumerate(row):
                q = encode(w, fmt)
                if q.saturated:
                    raise SaturationError(
                        f"weight layer {l} neuron {n} input {i} ({w!r}) "
                        f"does not fit 32 bits at scale {s}"
                    )
                weights[(mid, l, n, i)] = q.raw
        for n, b in enumerate(layer.biases):
            q = encode(b, fmt)
            if q.saturated:
                raise SaturationError(
                    f"bias layer {l} neuron {n} ({b!r}) does not fit 32 bits "
                    f"at scale {s}"
                )
            biases[(mid, l, n)] = q.raw

        act = layer.activation
        if act.kind == "leaky":
            aq = encode(act.alpha, fmt)
            if aq.saturated:  # unreachable while alpha < 1, kept for symmetry
                raise SaturationError(
                    f"leaky slope of layer {l} ({act.alpha!r}) does not fit "
                    f"32 bits at scale {s}"
                )
            acts.append(("leaky", aq.raw))
        elif act.kind == "sigmoid":
            acts.append(("sigmoid", act.order))
        else:
            acts.append((act.kind,))

    widths = (spec.layers[0].in_width,) + tuple(l.out_width for l in spec.layers)
    meta = TableMeta(s, widths, tuple(acts))
    return TableEntrySet(mid, meta, weights, biases)


# ---------------------------------------------------------------------------
# Table entry files


def emit_table_entries(entry_sets: Sequence[TableEntrySet]) -> str:
    """Render entry sets in canonical form.

    Models appear in id order.  Each block is its `M` metadata line (when
    present), then `W` lines sorted by (layer, neuron, input), then `B`
    lines sorted by (layer, neuron).  Two equal entry sets always render
    to identical bytes.
    """
    ordered = sorted(entry_sets, key=lambda es: es.model_id)
    seen: set[int] = set()
    lines: list[str] = []
    for es in ordered:
        if es.model_id in seen:
            raise ValueError(f"duplicate entry set for model {es.model_id}")
        seen.add(es.model_id)
        if es.meta is not None:
            m = es.meta
            parts = ["M", str(es.model_id), str(m.scale_bits), str(m.n_layers)]
            parts.extend(str(w) for w in m.widths)
            parts.extend(_act_code_to_token(c) for c in m.activations)
            lines.append(" ".join(parts))
        for key in sorted(es.weights):
            mid, l, n, i = key
            lines.append(f"W {mid} {l} {n} {i} {es.weights[key]}")
        for key in sorted(es.biases):
            mid, l, n = key
            lines.append(f"B {mid} {l} {n} {es.biases[key]}")
    return "\n".join(lines) + "\n" if lines else ""


def parse_table_entries(text: str) -> dict[int, TableEntrySet]:
    """Parse a table entry file into entry sets keyed by model id.

    Lines may arrive in any order; duplicates are errors.  A model with
    no `M` line parses with meta None: the entries are usable for
    inspection or re-emission, but a data plane will refuse to serve the
    model without its metadata.
    """
    metas: dict[int, TableMeta] = {}
    weights: dict[int, dict] = {}
    biases: dict[int, dict] = {}

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]

        if kind == "M":
            if len(fields) < 4:
                raise TableParseError(line_no, "expected: M <model> <scale> <n_layers> ...")
            mid = _parse_table_int(fields[1], line_no, "model id")
            scale = _parse_table_int(fields[2], line_no, "scale")
            n_layers = _parse_table_int(fields[3], line_no, "layer count")
            if not 0 <= mid <= 0xFFFF:
                raise TableParseError(line_no, f"model id must fit in 16 bits, got {mid}")
            if n_layers < 1:
                raise TableParseError(line_no, f"layer count must be positive, got {n_layers}")
            expected = 4 + (n_layers + 1) + n_layers
            if len(fields) != expected:
                raise TableParseError(
                    line_no,
                    f"{n_layers} layers need {expected} fields, got {len(fields)}",
                )
            widths = tuple(
                _parse_table_int(tok, line_no, "width")
                for tok in fields[4 : 4 + n_layers + 1]
            )
            acts = tuple(
                _act_code_from_token(tok, line_no) for tok in fields[4 + n_layers + 1 :]
            )
            if mid in metas:
                raise TableParseError(line_no, f"duplicate metadata for model {mid}")
            try:
                metas[mid] = TableMeta(scale, widths, acts)
            except ValueError as exc:
                raise TableParseError(line_no, str(exc)) from None
            continue

        if kind == "W":
            if len(fields) != 6:
                raise TableParseError(line_no, "expected: W <model> <layer> <neuron> <input> <raw>")
            mid, l, n, i = (
                _parse_table_int(tok, line_no, what)
                for tok, what in zip(fields[1:5], ("model id", "layer", "neuron", "input"))
            )
            raw = _parse_raw32(fields[5], line_no)
            if l < 0 or n < 0 or i < 0:
                raise TableParseError(line_no, "indices must be non-negative")
            key = (mid, l, n, i)
            bucket = weights.setdefault(mid, {})
            if key in bucket:
                raise TableParseError(line_no, f"duplicate weight entry {key}")
            bucket[key] = raw
            continue

        if kind == "B":
            if len(fields) != 5:
                raise TableParseError(line_no, "expected: B <model> <layer> <neuron> <raw>")
            mid, l, n = (
                _parse_table_int(tok, line_no, what)
                for tok, what in zip(fields[1:4], ("model id", "layer", "neuron"))
            )
            raw = _parse_raw32(fields[4], line_no)
            if l < 0 or n < 0:
                raise TableParseError(line_no, "indices must be non-negative")
            key = (mid, l, n)
            bucket = biases.setdefault(mid, {})
            if key in bucket:
                raise TableParseError(line_no, f"duplicate bias entry {key}")
            bucket[key] = raw
            continue

        raise TableParseError(line_no, f"unknown entry kind {kind!r}")

    out: dict[int, TableEntrySet] = {}
    for mid in sorted(set(metas) | set(weights) | set(biases)):
        out[mid] = TableEntrySet(
            mid, metas.get(mid), weights.get(mid, {}), biases.get(mid, {})
        )
    return out


def _parse_table_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token, 10)
    except ValueError:
        raise TableParseError(line_no, f"bad {what} {token!r}") from None


def _parse_raw32(token: str, line_no: int) -> int:
    raw = _parse_table_int(token, line_no, "raw value")
    if not I32_MIN <= raw <= I32_MAX:
        raise TableParseError(line_no, f"raw value {raw} does not fit 32 bits")
    return raw


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class Dataset:
    """Paired feature and target rows, all floats."""

    features: tuple[tuple[float, ...], ...]
    targets: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ValueError(
                f"{len(self.features)} feature rows vs {len(self.targets)} target rows"
            )
        if not self.features:
            raise ValueError("dataset is empty")
        fw, tw = len(self.features[0]), len(self.targets[0])
        if fw < 1 or tw < 1:
            raise ValueError("rows must have at least one column")
        for row in self.features:
            if len(row) != fw:
                raise ValueError("ragged feature rows")
        for row in self.targets:
            if len(row) != tw:
                raise ValueError("ragged target rows")

    @property
    def n_features(self) -> int:
        return len(self.features[0])

    @property
    def n_targets(self) -> int:
        return len(self.targets[0])


def parse_dataset(text: str) -> Dataset:
    """Parse a dataset CSV with header x0,..,xk,y0,..,ym."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty dataset file") from None

    n_x = 0
    while n_x < len(header) and header[n_x].strip() == f"x{n_x}":
        n_x += 1
    n_y = len(header) - n_x
    for j in range(n_y):
        if header[n_x + j].strip() != f"y{j}":
            raise DatasetError(
                f"bad header: expected x0..x<k>,y0..y<m>, got {','.join(header)!r}"
            )
    if n_x == 0 or n_y == 0:
        raise DatasetError(
            f"bad header: expected x0..x<k>,y0..y<m>, got {','.join(header)!r}"
        )

    features, targets = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != n_x + n_y:
            raise DatasetError(
                f"line {line_no}: expected {n_x + n_y} columns, got {len(row)}"
            )
        try:
            vals = [float(tok) for tok in row]
        except ValueError:
            raise DatasetError(f"line {line_no}: non-numeric cell") from None
        for v in vals:
            if not math.isfinite(v):
                raise DatasetError(f"line {line_no}: values must be finite")
        features.append(tuple(vals[:n_x]))
        targets.append(tuple(vals[n_x:]))

    try:
        return Dataset(tuple(features), tuple(targets))
    except ValueError as exc:
        raise DatasetError(str(exc)) from None


def dataset_to_csv(dataset: Dataset) -> str:
    """Render a dataset as CSV, byte-stable for equal inputs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [f"x{i}" for i in range(dataset.n_features)]
        + [f"y{j}" for j in range(dataset.n_targets)]
    )
    for feats, targs in zip(dataset.features, dataset.targets):
        writer.writerow([repr(v) for v in feats] + [repr(v) for v in targs])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Fitting


def fit_linear(
    dataset: Dataset,
    model_id: int = 1,
    scale_bits: int = 16,
    ridge: float = 0.0,
) -> ModelSpec:
    """Least-squares fit of a single linear layer to a dataset.

    Solves the normal equations for weights and intercepts directly, so
    results are bit-reproducible across hosts.  The ridge penalty applies
    to weights only, never the intercept: shrinking weights toward zero is
    a modeling choice, shrinking the intercept would just bias every
    prediction.  With ridge=0 a rank-deficient design (collinear or
    constant features, fewer rows than columns) has no unique solution
    and raises IllConditionedError; any positive ridge restores one.
    """
    if ridge < 0 or not math.isfinite(ridge):
        raise ValueError(f"ridge must be a finite non-negative number, got {ridge!r}")
    k = dataset.n_features
    m = dataset.n_targets
    cols = k + 1  # trailing column is the intercept

    # Normal equations: G = A^T A, H = A^T Y with A = [X | 1].
    g = [[0.0] * cols for _ in range(cols)]
    h = [[0.0] * m for _ in range(cols)]
    for feats, targs in zip(dataset.features, dataset.targets):
        row = list(feats) + [1.0]
        for a in range(cols):
            ra = row[a]
            ga = g[a]
            for b in range(cols):
                ga[b] += ra * row[b]
            ha = h[a]
            for j in range(m):
                ha[j] += ra * targs[j]
    for a in range(k):  # intercept stays unpenalized
        g[a][a] += ridge

    solution = _solve_linear(g, h)

    weights = tuple(tuple(solution[i][j] for i in range(k)) for j in range(m))
    biases = tuple(solution[k][j] for j in range(m))
    layer = LayerSpec(k, m, Activation.linear(), weights, biases)
    return ModelSpec(model_id, scale_bits, (layer,))


def _solve_linear(g: list[list[float]], h: list[list[float]]) -> list[list[float]]:
    """Gaussian elimination with partial pivoting; mutates its arguments."""
    n = len(g)
    m = len(h[0])
    limit = max(max(abs(v) for v in row) for row in g)
    tol = max(limit, 1.0) * 1e-12

    for col in range(n):
        pivot_row = max(range(col, n), key=lambda r: abs(g[r][col]))
        if abs(g[pivot_row][col]) <= tol:
            raise IllConditionedError(
                "normal equations are singular (collinear or constant features); "
                "retry with ridge > 0"
            )
        if pivot_row != col:
            g[col], g[pivot_row] = g[pivot_row], g[col]
            h[col], h[pivot_row] = h[pivot_row], h[col]
        pivot = g[col][col]
        for r in range(col + 1, n):
            factor = g[r][col] / pivot
            if factor == 0.0:
                continue
            for c in range(col, n):
                g[r][c] -= factor * g[col][c]
            for j in range(m):
                h[r][j] -= factor * h[col][j]

    for col in range(n - 1, -1, -1):
        pivot = g[col][col]
        for j in range(m):
            acc = h[col][j]
            for c in range(col + 1, n):
                acc -= g[col][c] * h[c][j]
            h[col][j] = acc / pivot
    return h


# ---------------------------------------------------------------------------
# Float reference inference


def float_forward(spec: ModelSpec, features: Sequence[float]) -> list[float]:
    """Reference forward pass in float64 with true activations.

    This is the ideal the fixed-point pipeline approximates: exact
    logistic sigmoid, no quantization, no clamps.  Quantization studies
    measure the pipeline against these outputs.
    """
    if len(features) != spec.n_features:
        raise ValueError(
            f"model takes {spec.n_features} features, got {len(features)}"
        )
    acts = [float(v) for v in features]
    for layer in spec.layers:
        nxt = []
        for n in range(layer.out_width):
            total = layer.biases[n]
            row = layer.weights[n]
            for i in range(layer.in_width):
                total += row[i] * acts[i]
            nxt.append(_float_activate(layer.activation, total))
        acts = nxt
    return acts


def _float_activate(act: Activation, x: float) -> float:
    if act.kind == "linear":
        return x
    if act.kind == "relu":
        return x if x > 0 else 0.0
    if act.kind == "leaky":
        return x if x > 0 else act.alpha * x
    return sigmoid_exact(x)
