"""Itemized parameter and FLOP accounting for four-stage models.

FLOPs are multiply-accumulates: one MAC counts as one FLOP. Parameters are
counted from the same weight registry that ``build_model`` allocates from.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .blocks import block_cost
from .model import ModelSpec, model_weight_shapes

SCHEMA_VERSION = 1

FLOP_CONVENTION = "FLOPs count multiply-accumulates (1 MAC = 1 FLOP)"

# Terms in report order. The first six are the per-block terms of the MILA
# complexity formula; the rest are the structure around the blocks. Norms,
# decays and shortcuts hold parameters but cost no MACs.
BLOCK_TERMS = ("in_out_proj", "qk_proj", "gate_proj", "linear_attention", "dwconv", "mlp")
EXTRA_TERMS = ("posenc", "delta_proj", "stem", "downsample", "head", "norm", "decay", "shortcut")
TERMS = BLOCK_TERMS + EXTRA_TERMS

# Reported (params, FLOPs) for the reference models at 224 x 224.
REFERENCE = {
    "MILA-T": (25_000_000, 4_200_000_000),
    "MILA-S": (43_000_000, 7_300_000_000),
    "MILA-B": (96_000_000, 16_200_000_000),
}

CSV_COLUMNS = ("section", "name", "params", "flops")


@dataclass
class StageCost:
    name: str
    params: int = 0
    flops: int = 0
    tokens: int = 0


@dataclass
class CostReport:
    model: str
    resolution: int
    terms: dict[str, int]
    stages: list[StageCost]
    param_terms: dict[str, int] = field(default_factory=dict)
    reference_params: int | None = None
    reference_flops: int | None = None

    @property
    def total_flops(self) -> int:
        return sum(self.terms.values())

    @property
    def total_params(self) -> int:
        return sum(s.params for s in self.stages)

    @property
    def block_flops(self) -> int:
        return sum(self.terms[t] for t in BLOCK_TERMS)

    @property
    def extra_flops(self) -> int:
        return sum(self.terms[t] for t in EXTRA_TERMS)

    def residuals(self) -> dict[str, float | int | None]:
        """Counted minus reported, absolute and relative."""
        out: dict[str, float | int | None] = {}
        for key, counted, ref in (("params", self.total_params, self.reference_params),
                                  ("flops", self.total_flops, self.reference_flops)):
            out[f"{key}_abs"] = None if ref is None else counted - ref
            out[f"{key}_rel"] = None if ref is None else round((counted - ref) / ref, 6)
        return out

    def check_identities(self) -> None:
        if sum(s.flops for s in self.stages) != self.total_flops:
            raise AssertionError("stage FLOPs do not add up to the term total")
        if sum(self.param_terms.values()) != self.total_params:
            raise AssertionError("param terms do not add up to the stage total")
        if any(v < 0 for v in self.terms.values()):
            raise AssertionError("negative FLOP term")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "convention": FLOP_CONVENTION,
            "model": self.model,
            "resolution": self.resolution,
            "flops_by_term": {t: self.terms[t] for t in TERMS},
            "params_by_term": {t: self.param_terms.get(t, 0) for t in TERMS},
            "stages": [{"name": s.name, "tokens": s.tokens, "params": s.params, "flops": s.flops}
                       for s in self.stages],
            "totals": {"params": self.total_params, "flops": self.total_flops,
                       "block_flops": self.block_flops, "extra_flops": self.extra_flops},
            "reference": {"params": self.reference_params, "flops": self.reference_flops},
            "residual": self.residuals(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for t in TERMS:
            writer.writerow(("term", t, self.param_terms.get(t, 0), self.terms[t]))
        for s in self.stages:
            writer.writerow(("stage", s.name, s.params, s.flops))
        writer.writerow(("total", self.model, self.total_params, self.total_flops))
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{self.model} at {self.resolution}x{self.resolution}", f"# {FLOP_CONVENTION}", ""]
        rows = [("term", "params", "FLOPs")]
        rows += [(t, f"{self.param_terms.get(t, 0):,}", f"{self.terms[t]:,}") for t in TERMS]
        rows.append(("", "", ""))
        rows += [(f"{s.name} ({s.tokens} tok)" if s.tokens else s.name, f"{s.params:,}", f"{s.flops:,}")
                 for s in self.stages]
        rows.append(("total", f"{self.total_params:,}", f"{self.total_flops:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        for r in rows:
            lines.append(f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}".rstrip())
        if self.reference_params is not None:
            res = self.residuals()
            lines.append("")
            lines.append(f"reported params {self.reference_params:,}  residual {res['params_rel']:+.2%}")
            lines.append(f"reported FLOPs  {self.reference_flops:,}  residual {res['flops_rel']:+.2%}")
        return "\n".join(lines) + "\n"


def _conv_flops(out_tokens: int, shape: tuple[int, ...]) -> int:
    k1, k2, cin, cout = shape
    return out_tokens * k1 * k2 * cin * cout


def count_costs(spec: ModelSpec, resolution: int = 224) -> CostReport:
    grids = spec.stage_grids(resolution)
    reg = model_weight_shapes(spec, resolution)
    terms = dict.fromkeys(TERMS, 0)
    param_terms: dict[str, int] = {}
    for ws in reg.values():
        param_terms[ws.term] = param_terms.get(ws.term, 0) + int(np.prod(ws.shape))

    half = resolution // 2  # first stem conv output side
    stem = StageCost("stem", tokens=grids[0].tokens)
    stem.flops = (_conv_flops(half * half, reg["stem.conv1.w"].shape)
                  + _conv_flops(grids[0].tokens, reg["stem.conv2.w"].shape))
    terms["stem"] = stem.flops
    stages = [stem]

    mixer = spec.mixer_config()
    for s in range(4):
        sc = StageCost(f"stage{s + 1}", tokens=grids[s].tokens)
        if s > 0:
            down = _conv_flops(grids[s].tokens, reg[f"down{s}.conv.w"].shape)
            terms["downsample"] += down
            sc.flops += down
        cost = block_cost(spec.block_spec(s), mixer, grids[s].tokens)
        for term, flops in cost.flops.items():
            terms[term] = terms.get(term, 0) + flops * spec.depths[s]
            sc.flops += flops * spec.depths[s]
        stages.append(sc)

    head = StageCost("head")
    head.flops = spec.dims[3] * spec.num_classes
    terms["head"] = head.flops
    stages.append(head)

    # params per stage straight off the registry prefixes
    for name, ws in reg.items():
        n = int(np.prod(ws.shape))
        if name.startswith("stem."):
            stem.params += n
        elif name.startswith("head."):
            head.params += n
        elif name.startswith("down"):
            stages[int(name[4])].params += n
        else:
            stages[int(name[5])].params += n

    ref = REFERENCE.get(spec.name)
    report = CostReport(spec.name, resolution, terms, stages, param_terms,
                        ref[0] if ref else None, ref[1] if ref else None)
    report.check_identities()
    return report
