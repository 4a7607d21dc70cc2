import numpy as np
import pytest

from lgmfit.errors import ModelSpecError, UnknownColumn
from lgmfit.model import build_model
from lgmfit.modelspec import (ComponentDecl, ModelDescription, emit, load,
                              parse, save)

MINIMAL = """
model {
  family gaussian
  component intercept
}
data {
  response y
}
"""

FULL = """
# survival-style layout
model {
  family poisson
  component intercept
  component rw1 bin { size 6 scaled constrained }
  component linear x
  component iid g { size 3 weight -1.0 name cluster }
}
data {
  response y
  exposure exposure
}
priors {
  bin gamma 2 0.1
  cluster gamma 1 5e-05
}
"""


class TestParse:
    def test_minimal(self):
        desc = parse(MINIMAL)
        assert desc.family == "gaussian"
        assert desc.response == "y"
        assert len(desc.components) == 1
        assert desc.components[0].kind == "intercept"
        model, design, family = build_model(desc, {"y": np.array([1.0, 2.0])})
        assert model.m == 1

    def test_full_layout(self):
        desc = parse(FULL)
        assert desc.family == "poisson"
        assert desc.exposure == "exposure"
        kinds = [c.kind for c in desc.components]
        assert kinds == ["intercept", "rw1", "linear", "iid"]
        walk = desc.components[1]
        assert walk.size == 6 and walk.scaled and walk.constrained
        assert walk.prior_shape == 2.0 and walk.prior_rate == 0.1
        clus = desc.components[3]
        assert clus.name == "cluster"
        assert clus.weight == -1.0
        assert clus.prior_shape == 1.0

    def test_comments_and_blank_lines_ignored(self):
        text = MINIMAL.replace("response y",
                               "response y   # bound column\n\n")
        assert parse(text).response == "y"

    def test_observation_prior(self):
        text = MINIMAL + "priors {\n  observation gamma 2 0.5\n}\n"
        desc = parse(text)
        assert desc.obs_prior_shape == 2.0
        assert desc.obs_prior_rate == 0.5

    def test_missing_column_at_build(self):
        desc = parse("""
model {
  family gaussian
  component linear height
}
data {
  response y
}
""")
        with pytest.raises(UnknownColumn):
            build_model(desc, {"y": np.array([1.0, 2.0])})


class TestDiagnostics:
    def test_syntax_error_has_line_number(self):
        bad = "model {\n  family gaussian\n  component intercept\n}\nnope {\n}\n"
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert err.value.line == 5
        assert "syntax error" in str(err.value)
        assert "line 5" in str(err.value)

    def test_unknown_field_in_model(self):
        bad = "model {\n  famly gaussian\n}\ndata {\n  response y\n}\n"
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert err.value.line == 2
        assert "unknown field" in str(err.value)

    def test_unknown_component_attribute(self):
        bad = ("model {\n  family gaussian\n"
               "  component iid g { sizzle 3 }\n}\n"
               "data {\n  response y\n}\n")
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert err.value.line == 3

    def test_type_mismatch(self):
        bad = ("model {\n  family gaussian\n"
               "  component iid g { size few }\n}\n"
               "data {\n  response y\n}\n")
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert "type mismatch" in str(err.value)
        assert err.value.line == 3

    def test_fractional_size_rejected(self):
        bad = ("model {\n  family gaussian\n"
               "  component iid g { size 2.5 }\n}\n"
               "data {\n  response y\n}\n")
        with pytest.raises(ModelSpecError):
            parse(bad)

    def test_unclosed_brace(self):
        with pytest.raises(ModelSpecError) as err:
            parse("model {\n  family gaussian\n")
        assert "unclosed" in str(err.value)

    def test_block_must_close_on_line(self):
        bad = ("model {\n  family gaussian\n"
               "  component iid g { size 3\n}\n}\n"
               "data {\n  response y\n}\n")
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert err.value.line == 3

    def test_missing_sections(self):
        with pytest.raises(ModelSpecError):
            parse("model {\n  family gaussian\n  component intercept\n}\n")
        with pytest.raises(ModelSpecError):
            parse("data {\n  response y\n}\n")

    def test_prior_for_unknown_component(self):
        bad = MINIMAL + "priors {\n  ghost gamma 1 1\n}\n"
        with pytest.raises(ModelSpecError) as err:
            parse(bad)
        assert "ghost" in str(err.value)

    def test_validation_rules(self):
        with pytest.raises(ModelSpecError):
            parse(MINIMAL.replace("family gaussian", "family student"))
        # exposure only makes sense for poisson counts
        with pytest.raises(ModelSpecError):
            parse(MINIMAL.replace("response y", "response y\n  exposure e"))
        dup = ("model {\n  family gaussian\n  component intercept\n"
               "  component intercept\n}\ndata {\n  response y\n}\n")
        with pytest.raises(ModelSpecError):
            parse(dup)


class TestEmit:
    def roundtrip(self, desc):
        again = parse(emit(desc))
        assert again == desc
        # canonical form is a fixed point
        assert emit(again) == emit(desc)

    def test_minimal_roundtrip(self):
        self.roundtrip(parse(MINIMAL))

    def test_full_roundtrip(self):
        self.roundtrip(parse(FULL))

    def test_programmatic_roundtrip(self):
        desc = ModelDescription(
            family="bernoulli", response="win", trials="games",
            components=[
                ComponentDecl(kind="intercept", prec=0.5),
                ComponentDecl(kind="linear", column="skill", name="ability"),
                ComponentDecl(kind="rw2", column="week", size=10,
                              scaled=True, constrained=True,
                              prior_shape=1.5, prior_rate=0.2),
            ])
        self.roundtrip(desc)

    def test_gaussian_obs_prior_roundtrip(self):
        desc = ModelDescription(
            family="gaussian", response="y",
            components=[ComponentDecl(kind="intercept")],
            obs_prior_shape=3.0, obs_prior_rate=0.25)
        self.roundtrip(desc)

    def test_load_save(self, tmp_path):
        path = tmp_path / "model.txt"
        desc = parse(FULL)
        save(desc, path)
        assert load(path) == desc
