import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopsim.channel import (
    AGENT_GEOMETRY_BYTES,
    Channel,
    ChannelConfig,
    FormatError,
    StructureError,
    TruncationError,
    box_cost,
    box_payload,
    corrupt,
    cost,
    decode,
    decode_boxes,
    dense_tensor_cost,
    encode,
    encode_boxes,
    fit_to_budget,
)
from coopsim.core import AgentClass, AgentQuery, LaneClass, LaneQuery, Pose
from coopsim.infra import V2XPayload
from payloads import random_agent, random_occupancy, random_payload, random_pose

seeds = st.integers(0, 2**32 - 1)


def dim_of(p):
    for q in (*p.agent_queries, *p.lane_queries):
        return q.feature.shape[0]
    return 8


def empty(t=0.0):
    return V2XPayload(1, t, Pose.identity())


def agents_payload(confs, dim=8, t=0.0):
    qs = tuple(AgentQuery(np.zeros(dim), (i, 0, 0), 0.0, (0, 0), i, c, (4, 2, 1.5), AgentClass.CAR, t)
               for i, c in enumerate(confs))
    return V2XPayload(1, t, Pose.identity(), qs)


# --- codec -----------------------------------------------------------------

def test_empty_payload_length():
    assert len(encode(empty())) == 121


def test_feature_block_is_1024_bytes():
    dim = 256
    rng = np.random.default_rng(0)
    one = V2XPayload(1, 0.0, Pose.identity(), (random_agent(rng, dim, 0.0),))
    none = empty()
    per_query = len(encode(one)) - len(encode(none))
    assert per_query == AGENT_GEOMETRY_BYTES + 2 * 1024


@given(seeds)
def test_round_trip(seed):
    p = random_payload(np.random.default_rng(seed))
    assert decode(encode(p), dim_of(p)) == p


@given(seeds)
def test_encoding_is_deterministic(seed):
    p = random_payload(np.random.default_rng(seed))
    assert encode(p) == encode(p)


def test_bad_magic_is_format_error():
    data = bytearray(encode(random_payload(np.random.default_rng(1), dim=4)))
    data[0] ^= 0xFF
    with pytest.raises(FormatError):
        decode(bytes(data), 4)


def test_cut_stream_is_truncation_error():
    rng = np.random.default_rng(2)
    p = V2XPayload(1, 0.0, Pose.identity(), (random_agent(rng, 16, 0.0),))
    data = encode(p)
    with pytest.raises(TruncationError) as info:
        decode(data[:-20], 16)
    assert info.value.offset >= 0


def test_trailing_bytes_and_bad_enums_are_structure_errors():
    data = encode(empty())
    with pytest.raises(StructureError):
        decode(data + b"\x00", 8)
    rng = np.random.default_rng(3)
    p = V2XPayload(1, 0.0, Pose.identity(), (random_agent(rng, 2, 0.0),))
    raw = bytearray(encode(p))
    raw[4 + 108 + 4 + 4] = 250  # class byte of the first agent
    with pytest.raises(StructureError):
        decode(bytes(raw), 2)


def test_box_codec_round_trip_and_size():
    rng = np.random.default_rng(4)
    full = V2XPayload(1, 2.0, random_pose(rng), tuple(random_agent(rng, 8, 2.0) for _ in range(5)))
    boxes = box_payload(full)
    data = encode_boxes(boxes)
    assert len(data) == 4 + 108 + 4 + 32 * 5
    back = decode_boxes(data)
    assert len(back.agent_queries) == 5
    for a, b in zip(boxes.agent_queries, back.agent_queries):
        assert np.allclose(a.ref_point, b.ref_point, atol=1e-4)
        assert abs(a.confidence - b.confidence) <= 1 / 65535
    assert box_cost(boxes).total_body_bytes == 4 + 32 * 5
    assert box_cost(empty()).total_body_bytes == 0


# --- cost model --------------------------------------------------------------

def test_dense_tensor_example():
    report = dense_tensor_cost((24, 36, 36), 2.0)
    assert report.total_body_bytes == 124_416
    assert report.bps == 248_832


def test_ten_feature_blocks():
    lanes = tuple(LaneQuery(np.zeros(256), [(0, 0), (1, 0)], LaneClass.LANE, 1.0) for _ in range(10))
    report = cost(V2XPayload(1, 0.0, Pose.identity(), (), lanes), 2.0)
    assert report.feature_bytes == 10_240
    assert report.feature_bytes * 2 == 20_480
    agents = agents_payload([0.5] * 10, dim=256)
    assert cost(agents).feature_bytes == 4 * 256 * 2 * 10


def test_empty_cost_is_zero():
    r = cost(empty())
    assert r.total_body_bytes == 0 and r.bps == 0.0


# --- budget ---------------------------------------------------------------------

def test_budget_examples():
    p = agents_payload([0.5, 0.9, 0.7], dim=131)
    each = AGENT_GEOMETRY_BYTES + 8 * 131
    assert each == 1101
    assert fit_to_budget(p, 10_000) is p
    assert fit_to_budget(p, 0).is_empty
    kept = fit_to_budget(p, 2300).agent_queries
    assert sorted(q.confidence for q in kept) == [0.7, 0.9]


@given(seeds, st.floats(0, 60_000))
def test_fitted_cost_is_bounded(seed, budget):
    p = random_payload(np.random.default_rng(seed), dim=64)
    fitted = fit_to_budget(p, budget)
    assert cost(fitted).total_body_bytes <= min(budget, cost(p).total_body_bytes)
    assert decode(encode(fitted), 64) == fitted


def _retained(p, fitted):
    agents = {id(q) for q in fitted.agent_queries}
    lanes = {id(q) for q in fitted.lane_queries}
    cells = set()
    if fitted.occupancy is not None:
        occ = fitted.occupancy
        cells = set(range(occ.p0.size)) if occ.cells is None else set(occ.cells.tolist())
    return agents, lanes, cells


@given(seeds, st.floats(0, 40_000), st.floats(0, 40_000))
def test_budget_retention_is_nested(seed, b1, b2):
    lo, hi = sorted((b1, b2))
    p = random_payload(np.random.default_rng(seed), dim=32)
    small = _retained(p, fit_to_budget(p, lo))
    large = _retained(p, fit_to_budget(p, hi))
    for a, b in zip(small, large):
        assert a <= b


def test_sparse_degradation_prefers_high_p0():
    rng = np.random.default_rng(5)
    occ = random_occupancy(rng, 0.0, sparse=False)
    p = V2XPayload(1, 0.0, Pose.identity(), occupancy=occ)
    fitted = fit_to_budget(p, 13 + 4 + 12 * 3).occupancy
    assert fitted.cells.shape == (3,)
    flat = occ.p0.reshape(-1)
    assert sorted(flat[fitted.cells]) == sorted(np.sort(flat)[-3:])


# --- corruption ------------------------------------------------------------------

def test_corrupt_examples():
    p = agents_payload([0.5] * 10)
    rng = np.random.default_rng
    assert corrupt(p, 0.0, rng(0)) is p
    assert corrupt(p, 1.0, rng(0)).agent_queries == ()
    a = corrupt(p, 0.3, rng(9)).agent_queries
    b = corrupt(p, 0.3, rng(9)).agent_queries
    assert len(a) == 7 and [q.track_id for q in a] == [q.track_id for q in b]


@given(seeds, st.floats(0, 1), st.floats(0, 1))
def test_corruption_nested_across_fractions(seed, f1, f2):
    lo, hi = sorted((f1, f2))
    p = agents_payload([0.5] * 13)
    keep_lo = {q.track_id for q in corrupt(p, lo, np.random.default_rng(seed)).agent_queries}
    keep_hi = {q.track_id for q in corrupt(p, hi, np.random.default_rng(seed)).agent_queries}
    assert keep_hi <= keep_lo


# --- link ---------------------------------------------------------------------------

def test_zero_latency_delivers_on_next_poll():
    ch = Channel(ChannelConfig(), feature_dim=8)
    ch.submit(empty(1.0), 1.0)
    out = ch.poll(1.0)
    assert len(out) == 1 and out[0].payload == empty(1.0)


def test_latency_threshold():
    ch = Channel(ChannelConfig(latency=0.5), feature_dim=8)
    ch.submit(empty(1.0), 1.0)
    assert ch.poll(1.4) == []
    assert len(ch.poll(1.5)) == 1


def test_fifo_order():
    ch = Channel(ChannelConfig(latency=0.5), feature_dim=8)
    ch.submit(empty(1.0), 1.0)
    ch.submit(empty(1.5), 1.5)
    assert [d.send_time for d in ch.poll(5.0)] == [1.0, 1.5]


def test_send_times_must_not_go_backwards():
    ch = Channel(ChannelConfig(), feature_dim=8)
    ch.submit(empty(1.0), 1.0)
    with pytest.raises(ValueError):
        ch.submit(empty(0.5), 0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(latency=-1)
    with pytest.raises(ValueError):
        ChannelConfig(drop_fraction=1.5)
    with pytest.raises(ValueError):
        ChannelConfig.from_dict({"jitter": 1})
