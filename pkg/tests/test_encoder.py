import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hetseq import encoder, numeric as nm
from hetseq.events import Event, Sample, SchemaError


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    return nm.ParameterSet({
        "C_type": rng.standard_normal((3, 4)),
        "V_c": rng.standard_normal((3, 5)),
        "V_n": rng.standard_normal((3, 2)),
    })


def test_type_embedding_is_a_column(params):
    assert_array_equal(encoder.embed_type(2, params), params["C_type"][:, 2])


def test_type_embedding_out_of_range(params):
    with pytest.raises(SchemaError):
        encoder.embed_type(4, params)


def test_event_without_attributes_encodes_to_its_type(params):
    s, x = encoder.encode_event(Event(1, 0.0), params)
    assert_array_equal(x, s)


def test_attribute_encoding_formula(params):
    e = Event(0, 0.0, (1, 3), ((0, 0.5), (1, -2.0)))
    s, x = encoder.encode_event(e, params)
    V_c, V_n = params["V_c"], params["V_n"]
    expected = s + V_c[:, 1] + V_c[:, 3] + np.tanh(0.5 * V_n[:, 0] - 2.0 * V_n[:, 1])
    assert_allclose(x, expected, rtol=1e-15)


def test_numeric_term_is_bounded(params):
    e = Event(0, 0.0, (), ((0, 1e6),))
    s, x = encoder.encode_event(e, params)
    assert np.all(np.abs(x - s) <= 1.0)


def test_encoding_gradients(params):
    e = Event(2, 0.0, (4,), ((1, 0.7),))

    def f(p):
        g = nm.Graph()
        _, x = encoder.encode_event(e, g.bind(p))
        return nm.total(nm.mul(x, x))

    assert nm.grad_check(f, params) < 1e-7


def test_scaler_fit_and_transform():
    evs = (Event(0, 0.0, (), ((0, 1.0),)), Event(0, 1.0, (), ((0, 3.0),)))
    sample = Sample("a", 0, evs)
    sc = encoder.NumericScaler.fit([sample], n_slots=2)
    assert_allclose(sc.mean, [2.0, 0.0])
    assert_allclose(sc.std, [1.0, 1.0])  # slot 1 unseen keeps unit scale
    out = sc.transform(sample)
    assert [e.num_values[0][1] for e in out.events] == [-1.0, 1.0]


def test_scaler_identity_is_a_no_op():
    sc = encoder.NumericScaler.identity(3)
    assert sc.transform_value(2, 4.5) == 4.5
