import math

import pytest
from hypothesis import given, settings, strategies as st

from rsloc.config import ConfigError, ExperimentConfig, dumps, load, loads, parse


def _is_word(s):
    if s.lower() in ("true", "false"):
        return False
    try:
        float(s)
    except ValueError:
        return True
    return False


names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
keys = st.lists(names, min_size=1, max_size=3).map(".".join)
words = st.from_regex(r"[A-Za-z_][A-Za-z0-9_.\-]{0,8}", fullmatch=True).filter(_is_word)
scalars = st.one_of(
    st.integers(-(10**12), 10**12),
    st.floats(allow_nan=False, allow_infinity=True),
    st.booleans(),
    words,
)
values = st.one_of(scalars, st.lists(scalars, min_size=2, max_size=4))


@settings(max_examples=500, deadline=None)
@given(st.dictionaries(keys, values, max_size=8))
def test_round_trip(d):
    assert parse(dumps(d))[0] == d


def test_parse_example():
    text = """
    # comment
    measure.kind = flat_strong
    measure.n = 3       # trailing comment
    measure.eta = 4
    checks.lambdas = 0.5, 1, 2
    run.whiten = true
    """
    cfg = loads(text)
    assert cfg.measure.kind == "flat_strong"
    assert cfg.measure.eta == 4.0 and isinstance(cfg.measure.eta, float)
    assert cfg.checks.lambdas == [0.5, 1, 2]
    assert cfg.run.whiten is True


@pytest.mark.parametrize(
    "text,line",
    [
        ("measure.n = 2\nmeasure.bogus = 1\n", 2),
        ("run.seed = 1\n\nnot a pair\n", 3),
        ("run.seed = 1\nrun.seed = 2\n", 2),
        ("run.whiten = 1\n", 1),
        ("9key = 1\n", 1),
        ("run.seed = \n", 1),
        ("run.replicas = 0\n", 1),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as e:
        loads(text)
    assert e.value.line == line
    assert str(e.value).startswith(f"line {line}:")


def test_validation():
    with pytest.raises(ConfigError):
        loads("measure.k = 3\nmeasure.n = 2\n")
    with pytest.raises(ConfigError):
        loads("run.moments = magic\n")
    with pytest.raises(ConfigError):
        loads("run.dt = 2\nrun.horizon = 1\n")


def test_typed_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.measure.kind = "flat_strong"
    cfg.measure.scale = [1.0, 2.0]
    cfg.run.dt = 0.02
    path = tmp_path / "exp.cfg"
    path.write_text(cfg.dumps())
    again = load(path)
    assert again.flat() == cfg.flat()


def test_inf_value():
    assert math.isinf(parse("x = inf\n")[0]["x"])
