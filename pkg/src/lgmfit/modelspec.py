"""Text format for model descriptions.

A small brace tree with three sections:

    model {
      family poisson
      component intercept
      component linear x { prec 0.001 }
      component rw1 bin { size 50 scaled constrained }
    }
    data {
      response y
      exposure e
    }
    priors {
      bin gamma 1 5e-05
      observation gamma 1 5e-05
    }

`model` lists the family and the additive components in order.  Component
lines name a kind, an optional data column, and an optional attribute block;
attributes are bare flags (scaled, constrained) or key-value pairs (size,
weight, prec, name).  `data` binds the response and the optional exposure /
offset / trials columns.  `priors` overrides the log-precision Gamma prior
per component (by component display name) and, for the gaussian family, the
observation noise prior.  Everything has defaults, so the shortest valid
file is `model { family gaussian component intercept } data { response y }`.

Parsing is line-oriented: `#` starts a comment, braces may share a line with
their header, one statement per line.  `emit` writes a canonical form that
parses back to an equal description.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ModelSpecError
from .model import HYPER_RATE_DEFAULT, HYPER_SHAPE_DEFAULT

FAMILIES = ("gaussian", "poisson", "bernoulli")
COMPONENT_KINDS = ("intercept", "linear", "iid", "rw1", "rw2")
KINDS_WITH_COLUMN = ("linear", "iid", "rw1", "rw2")
FLAG_ATTRS = ("scaled", "constrained")
VALUE_ATTRS = ("size", "weight", "prec", "name")


@dataclass
class ComponentDecl:
    kind: str
    column: str | None = None
    size: int | None = None
    weight: float = 1.0
    scaled: bool = False
    constrained: bool = False
    prec: float | None = None          # fixed effects only
    name: str | None = None
    prior_shape: float | None = None   # gamma prior on the precision
    prior_rate: float | None = None

    def display_name(self) -> str:
        if self.name is not None:
            return self.name
        if self.column is not None:
            return self.column
        return self.kind

    def validate(self, line: int | None = None):
        def bad(msg):
            raise ModelSpecError(msg, line)
        if self.kind not in COMPONENT_KINDS:
            bad(f"unknown component kind {self.kind!r}")
        if self.kind in KINDS_WITH_COLUMN and self.column is None:
            bad(f"component {self.kind} needs a data column")
        if self.kind == "intercept" and self.column is not None:
            bad("intercept takes no column")
        if (self.prior_shape is None) != (self.prior_rate is None):
            bad("gamma prior needs both shape and rate")
        if self.kind in ("intercept", "linear"):
            for attr in ("size", "scaled", "constrained"):
                if getattr(self, attr):
                    bad(f"{attr} does not apply to {self.kind}")
            if self.prior_shape is not None:
                bad(f"{self.kind} has a fixed precision, not a prior")
        else:
            if self.prec is not None:
                bad(f"prec does not apply to {self.kind}")
        if self.size is not None and self.size < 1:
            bad("size must be positive")
        if self.prec is not None and self.prec <= 0:
            bad("prec must be positive")
        if self.prior_shape is not None:
            if self.prior_shape <= 0 or self.prior_rate <= 0:
                bad("gamma prior needs positive shape and rate")


@dataclass
class ModelDescription:
    family: str
    response: str
    components: list[ComponentDecl] = field(default_factory=list)
    exposure: str | None = None
    offset: str | None = None
    trials: str | None = None
    obs_prior_shape: float = HYPER_SHAPE_DEFAULT
    obs_prior_rate: float = HYPER_RATE_DEFAULT

    def validate(self):
        if self.family not in FAMILIES:
            raise ModelSpecError(f"unknown family {self.family!r}")
        if not self.components:
            raise ModelSpecError("model has no components")
        if self.exposure is not None and self.offset is not None:
            raise ModelSpecError("give exposure or offset, not both")
        if (self.exposure or self.offset) and self.family != "poisson":
            raise ModelSpecError("exposure/offset is a poisson option")
        if self.trials is not None and self.family != "bernoulli":
            raise ModelSpecError("trials is a bernoulli option")
        if self.obs_prior_shape <= 0 or self.obs_prior_rate <= 0:
            raise ModelSpecError("observation prior needs positive shape "
                                 "and rate")
        custom_obs = (self.obs_prior_shape != HYPER_SHAPE_DEFAULT
                      or self.obs_prior_rate != HYPER_RATE_DEFAULT)
        if custom_obs and self.family != "gaussian":
            raise ModelSpecError("observation prior is a gaussian option")
        names = [c.display_name() for c in self.components]
        if len(set(names)) != len(names):
            raise ModelSpecError("duplicate component names; use name <id>")
        for c in self.components:
            c.validate()


def _tokens(line: str) -> list[str]:
    body = line.split("#", 1)[0]
    return body.replace("{", " { ").replace("}", " } ").split()


def _parse_number(tok: str, lineno: int, kind: str = "number") -> float:
    try:
        return float(tok)
    except ValueError:
        raise ModelSpecError(
            f"type mismatch: expected a {kind}, got {tok!r}", lineno)


def _parse_int(tok: str, lineno: int) -> int:
    val = _parse_number(tok, lineno, "count")
    if val != int(val):
        raise ModelSpecError(f"type mismatch: expected a count, got {tok!r}",
                             lineno)
    return int(val)


def _component_from_tokens(toks: list[str], lineno: int) -> ComponentDecl:
    if not toks:
        raise ModelSpecError("component needs a kind", lineno)
    kind = toks[0]
    rest = toks[1:]
    column = None
    if rest and rest[0] not in FLAG_ATTRS and rest[0] not in VALUE_ATTRS:
        column = rest[0]
        rest = rest[1:]
    decl = ComponentDecl(kind=kind, column=column)
    i = 0
    while i < len(rest):
        tok = rest[i]
        if tok in FLAG_ATTRS:
            setattr(decl, tok, True)
            i += 1
        elif tok in VALUE_ATTRS:
            if i + 1 >= len(rest):
                raise ModelSpecError(f"{tok} needs a value", lineno)
            val = rest[i + 1]
            if tok == "size":
                decl.size = _parse_int(val, lineno)
            elif tok == "weight":
                decl.weight = _parse_number(val, lineno)
            elif tok == "prec":
                decl.prec = _parse_number(val, lineno)
            else:
                decl.name = val
            i += 2
        else:
            raise ModelSpecError(f"unknown field {tok!r} in component",
                                 lineno)
    decl.validate(lineno)
    return decl


def parse(text: str) -> ModelDescription:
    family = None
    response = None
    components: list[ComponentDecl] = []
    extras: dict[str, str | None] = {
        "exposure": None, "offset": None, "trials": None}
    priors: dict[str, tuple[float, float]] = {}
    obs_prior: tuple[float, float] | None = None

    section = None
    depth = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw)
        if not toks:
            continue
        if section is None:
            if len(toks) >= 1 and toks[0] in ("model", "data", "priors"):
                if len(toks) == 2 and toks[1] == "{":
                    section, depth = toks[0], 1
                elif len(toks) == 1:
                    raise ModelSpecError(
                        f"expected '{{' after {toks[0]}", lineno)
                else:
                    raise ModelSpecError("one statement per line", lineno)
            else:
                raise ModelSpecError(
                    f"syntax error: unknown section {toks[0]!r}", lineno)
            continue
        if toks == ["}"]:
            depth -= 1
            if depth == 0:
                section = None
            continue
        # strip a trailing open/close brace pair used by component lines
        if section == "model":
            key = toks[0]
            if key == "family":
                if len(toks) != 2:
                    raise ModelSpecError("family takes one value", lineno)
                if toks[1] not in FAMILIES:
                    raise ModelSpecError(
                        f"unknown family {toks[1]!r}", lineno)
                family = toks[1]
            elif key == "component":
                body = toks[1:]
                if "{" in body:
                    if body[-1] != "}" or body.count("{") != 1:
                        raise ModelSpecError(
                            "component attribute block must close on the "
                            "same line", lineno)
                    cut = body.index("{")
                    body = body[:cut] + body[cut + 1:-1]
                components.append(_component_from_tokens(body, lineno))
            else:
                raise ModelSpecError(
                    f"unknown field {key!r} in model section", lineno)
        elif section == "data":
            if len(toks) != 2:
                raise ModelSpecError("data entries are `key column`", lineno)
            key, val = toks
            if key == "response":
                response = val
            elif key in extras:
                extras[key] = val
            else:
                raise ModelSpecError(
                    f"unknown field {key!r} in data section", lineno)
        elif section == "priors":
            if len(toks) != 4 or toks[1] != "gamma":
                raise ModelSpecError(
                    "priors entries are `<component> gamma <shape> <rate>`",
                    lineno)
            pair = (_parse_number(toks[2], lineno),
                    _parse_number(toks[3], lineno))
            if toks[0] == "observation":
                obs_prior = pair
            else:
                priors[toks[0]] = pair
    if depth != 0:
        raise ModelSpecError("unclosed brace at end of file")
    if family is None:
        raise ModelSpecError("model section must set a family")
    if response is None:
        raise ModelSpecError("data section must set a response column")

    by_name = {c.display_name(): i for i, c in enumerate(components)}
    for target, pair in priors.items():
        if target not in by_name:
            raise ModelSpecError(
                f"prior for unknown component {target!r}")
        i = by_name[target]
        components[i] = replace(components[i], prior_shape=pair[0],
                                prior_rate=pair[1])
    desc = ModelDescription(family=family, response=response,
                            components=components, **extras)
    if obs_prior is not None:
        desc.obs_prior_shape, desc.obs_prior_rate = obs_prior
    desc.validate()
    return desc


def emit(desc: ModelDescription) -> str:
    """Canonical text form; parse(emit(d)) equals d."""
    desc.validate()
    out = ["model {"]
    out.append(f"  family {desc.family}")
    for c in desc.components:
        parts = ["  component", c.kind]
        if c.column is not None:
            parts.append(c.column)
        attrs = []
        if c.size is not None:
            attrs += ["size", str(c.size)]
        if c.weight != 1.0:
            attrs += ["weight", repr(c.weight)]
        if c.prec is not None:
            attrs += ["prec", repr(c.prec)]
        if c.scaled:
            attrs.append("scaled")
        if c.constrained:
            attrs.append("constrained")
        if c.name is not None:
            attrs += ["name", c.name]
        if attrs:
            parts += ["{"] + attrs + ["}"]
        out.append(" ".join(parts))
    out.append("}")
    out.append("data {")
    out.append(f"  response {desc.response}")
    for key in ("exposure", "offset", "trials"):
        val = getattr(desc, key)
        if val is not None:
            out.append(f"  {key} {val}")
    out.append("}")
    prior_lines = []
    for c in desc.components:
        if c.prior_shape is not None:
            prior_lines.append(
                f"  {c.display_name()} gamma {c.prior_shape!r} "
                f"{c.prior_rate!r}")
    if (desc.obs_prior_shape != HYPER_SHAPE_DEFAULT
            or desc.obs_prior_rate != HYPER_RATE_DEFAULT):
        prior_lines.append(f"  observation gamma {desc.obs_prior_shape!r} "
                           f"{desc.obs_prior_rate!r}")
    if prior_lines:
        out.append("priors {")
        out.extend(prior_lines)
        out.append("}")
    return "\n".join(out) + "\n"


def load(path) -> ModelDescription:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def save(desc: ModelDescription, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit(desc))
