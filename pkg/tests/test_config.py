import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergokit import ParseError, emit, parse_config
from ergokit.config import EXPERIMENTS, TOP_FIELDS, field_docs


def test_minimal_document_resolves_defaults():
    cfg = parse_config("experiment: tv-decay\nmodel:\n  name: example-e1\n")
    assert cfg.experiment == "tv-decay"
    assert cfg.model == {"name": "example-e1", "k": 1.0, "sigma": 1.0}
    for key, spec in TOP_FIELDS.items():
        if key != "experiment":
            assert key in cfg.params
    assert cfg.params["dt"] == 0.01 and cfg.params["bins"] == 40
    assert cfg.levy is None


def test_unknown_key_named_with_line():
    with pytest.raises(ParseError, match=r"'dtt' \(line 2\)"):
        parse_config("experiment: tv-decay\ndtt: 0.1\nmodel: {name: example-e1}\n")


def test_unknown_model_key():
    with pytest.raises(ParseError, match="'kk'"):
        parse_config("experiment: simulate\nmodel:\n  name: example-e1\n  kk: 2\n")


def test_alpha_range_error():
    text = "experiment: orey-check\nmodel: {name: linear}\nlevy:\n  alpha_index: 2.5\n"
    with pytest.raises(ParseError, match=r"\(0, 2\)"):
        parse_config(text)


def test_missing_model():
    with pytest.raises(ParseError, match="model"):
        parse_config("experiment: simulate\n")


def test_type_mismatch():
    with pytest.raises(ParseError, match=r"'n_paths' \(line 2\)"):
        parse_config("experiment: simulate\nn_paths: many\nmodel: {name: example-e1}\n")
    with pytest.raises(ParseError, match="positive"):
        parse_config("experiment: simulate\ndt: -1\nmodel: {name: example-e1}\n")


def test_bad_experiment_and_model_names():
    with pytest.raises(ParseError, match="not one of"):
        parse_config("experiment: explode\nmodel: {name: example-e1}\n")
    with pytest.raises(ParseError, match="not one of"):
        parse_config("experiment: simulate\nmodel: {name: heat}\n")


def test_malformed_yaml():
    with pytest.raises(ParseError):
        parse_config("experiment: [simulate\n")


def test_duplicate_key():
    with pytest.raises(ParseError, match="duplicate"):
        parse_config("experiment: simulate\ndt: 0.1\ndt: 0.2\nmodel: {name: example-e1}\n")


def test_polynomial_terms():
    text = ("experiment: rank-check\nmodel:\n  name: polynomial\n"
            "  drift: [[[1.0, [0, 2]], [-1.0, [1, 0]]], [[-1.0, [0, 1]]]]\n")
    cfg = parse_config(text)
    assert cfg.model["drift"][0] == [[1.0, [0, 2]], [-1.0, [1, 0]]]
    with pytest.raises(ParseError, match="bad term"):
        parse_config(text.replace("[0, 2]", "[0, 2, 1]"))


def test_levy_dissipative_defaults():
    cfg = parse_config("experiment: couple\nmodel: {name: levy-dissipative}\n")
    assert cfg.levy["scale"] == 0.1 and cfg.levy["large_jump_rate"] == 0.5


def test_every_field_documented():
    assert all(desc or key == "name" for _, key, _, desc in field_docs())


numbers = st.floats(0.001, 100, allow_nan=False, allow_infinity=False)
models = st.one_of(
    st.fixed_dictionaries({"name": st.just("example-e1"), "k": numbers, "sigma": numbers}),
    st.fixed_dictionaries({"name": st.just("linear"),
                           "B": st.lists(st.lists(numbers, min_size=2, max_size=2),
                                         min_size=2, max_size=2)}),
    st.fixed_dictionaries({"name": st.just("levy-dissipative"), "cubic": numbers}),
)
tops = st.fixed_dictionaries({"experiment": st.sampled_from(EXPERIMENTS)}, optional={
    "seed": st.integers(0, 2 ** 64 - 1), "dt": numbers, "bins": st.integers(1, 100),
    "plot": st.booleans(), "times": st.lists(numbers, min_size=1, max_size=5),
    "x0": st.lists(numbers, min_size=2, max_size=2), "output": st.text("abc/_-", min_size=1),
    "tv_method": st.sampled_from(["auto", "histogram"]),
})
levies = st.one_of(st.none(), st.fixed_dictionaries({}, optional={
    "alpha_index": st.floats(0.01, 1.99), "truncation_rho": st.floats(0.001, 0.5),
    "small_jump_mode": st.sampled_from(["drop", "gaussian_substitute"])}))


@given(tops, models, levies)
@settings(max_examples=60, deadline=None)
def test_round_trip(top, model, levy):
    import yaml
    doc = dict(top, model=model)
    if levy is not None:
        doc["levy"] = levy
    cfg = parse_config(yaml.safe_dump(doc))
    again = parse_config(emit(cfg))
    assert again == cfg
    assert emit(again) == emit(cfg)
