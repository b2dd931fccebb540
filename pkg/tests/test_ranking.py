import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfaudit.errors import EmptySpace, NotInSpace
from cfaudit.generators import ExplanationRecord, FeatureMask, GenBudget, Provenance, exhaustive_enumerate
from cfaudit.metrics import UtilityEnv, UtilitySpec
from cfaudit.models import HyperParams, Model, Tree, rule_model_xor, train_forest
from cfaudit.ranking import (ExplanationSpace, MethodConfig, ProviderPolicy, assign_ids,
                             build_space, certify_top_rank, is_cherry_picked, literal_space, rank,
                             select, select_flagged)
from cfaudit.tabular import (LOAN_SCHEMA, NUMERIC, XOR_SCHEMA, Dataset, FeatureSchema,
                             FeatureSpec, Instance, gen_synthetic_loan, gen_xor,
                             make_normalization)

from oracles import brute_cherry_picked, brute_rank

LINE = FeatureSchema((FeatureSpec("v", NUMERIC, (0.0, 1000.0)),))
LINE_X = LINE.instance(0)
SPARSITY = UtilitySpec("sparsity")
L2 = UtilitySpec("l2_normalized")


def line_env(hi):
    ref = [LINE.instance(0), LINE.instance(hi)]
    return UtilityEnv(LINE, make_normalization(ref, "train-ranges", LINE))


def line_space(offsets):
    """Utility under L2 is -offset/range, so the offsets set the ranking."""
    return literal_space(LINE_X, [LINE.instance(v) for v in offsets])


offsets = st.lists(st.integers(1, 12), min_size=1, max_size=25)


@settings(max_examples=1000, deadline=None)
@given(offsets)
def test_rank_is_utility_consistent_bijection(vals):
    sp = line_space(vals)
    r = rank(sp, L2, line_env(1000))
    assert sorted(r.rank) == list(range(1, len(vals) + 1))
    u = r.values.tolist()
    ids = [rec.id for rec in sp.records]
    assert list(r.rank) == brute_rank(u, ids)
    for i in range(len(vals)):
        for j in range(len(vals)):
            if u[i] > u[j]:
                assert r.rank[i] < r.rank[j]
            elif u[i] == u[j] and ids[i] < ids[j]:
                assert r.rank[i] < r.rank[j]


@settings(max_examples=300, deadline=None)
@given(offsets)
def test_cherry_pick_matches_brute_force(vals):
    sp = line_space(vals)
    env = line_env(1000)
    r = rank(sp, L2, env)
    u = r.values.tolist()
    ids = [rec.id for rec in sp.records]
    for k, rec in enumerate(sp.records):
        cp = is_cherry_picked(r, rec)
        assert cp.cherry_picked == brute_cherry_picked(u, ids, k)
        if cp.cherry_picked:
            assert r.rank_of(cp.witness) < cp.rank
            assert cp.strict == (cp.gap > 0)
        cert = certify_top_rank(sp, L2, rec, env)
        assert cert.top_ranked == (not cp.cherry_picked)
        if cert.top_ranked:
            assert cert.evaluations == len(sp) and len(cert.utility_table) == len(sp)
        else:
            assert brute_cherry_picked(u, ids, k) and cert.counterexample is not None


@settings(max_examples=200, deadline=None)
@given(offsets, st.integers(13, 1000))
def test_monotone_transform_keeps_order(vals, hi):
    # every range above the largest offset rescales utilities without clamping
    sp = line_space(vals)
    a = rank(sp, L2, line_env(1000))
    b = rank(sp, L2, line_env(hi))
    assert a.rank == b.rank
    assert not np.array_equal(a.values, b.values) or hi == 1000


loan_values = st.tuples(st.sampled_from([25000, 30000, 45000, 60000]), st.sampled_from("FM"),
                        st.sampled_from(["Temporary", "Permanent"]), st.sampled_from([30, 40, 55]))


@settings(max_examples=300, deadline=None)
@given(st.lists(loan_values, min_size=1, max_size=12))
def test_policy_properties(es):
    x = LOAN_SCHEMA.instance(25000, "F", "Temporary", 30)
    sp = literal_space(x, [LOAN_SCHEMA.instance(*e) for e in es])
    env = UtilityEnv(LOAN_SCHEMA)
    r = rank(sp, SPARSITY, env)
    honest = select(ProviderPolicy(), r, LOAN_SCHEMA)
    assert not is_cherry_picked(r, honest).cherry_picked
    pol = ProviderPolicy("sensitive-avoiding", ("Gender",), "best-available")
    chosen, fell_back = select_flagged(pol, r, LOAN_SCHEMA)
    edits = [rec.counterfactual.values[1] != "F" for rec in sp.records]
    if all(edits):
        assert fell_back and chosen.id == r.order[0].id
    else:
        assert not fell_back and chosen.counterfactual.values[1] == "F"
        if r.order[0].counterfactual.values[1] != "F":
            assert is_cherry_picked(r, chosen).cherry_picked
        # same answer as the top of the saturating-penalty ranking
        pen = UtilitySpec("penalized", base=SPARSITY, sensitive_set=("Gender",),
                          penalty_mode="sparsity-saturating")
        pr = rank(sp, pen, env)
        best = [rec for rec in pr.order if rec.counterfactual.values[1] == "F"][0]
        assert best.id == chosen.id


def test_singleton_space(loan_x, loan_es):
    sp = literal_space(loan_x, loan_es[:1])
    r = rank(sp, SPARSITY, UtilityEnv(LOAN_SCHEMA))
    assert r.rank == (1,)
    assert not is_cherry_picked(r, sp.records[0]).cherry_picked


def test_not_in_space(loan_space, loan_x, loan_es):
    r = rank(loan_space, SPARSITY, UtilityEnv(LOAN_SCHEMA))
    stranger = literal_space(loan_x, loan_es[::-1]).records[0]
    with pytest.raises(NotInSpace):
        is_cherry_picked(r, stranger)
    with pytest.raises(NotInSpace):
        loan_space.by_id(9)


def test_certificate_on_xor_grid():
    m = rule_model_xor()
    x = XOR_SCHEMA.instance(25000, "0")
    grid = [[0.0, 25000.0, 50000.0, 75000.0, 100000.0], ["0", "1"]]
    recs = exhaustive_enumerate(m, x, grid, FeatureMask.all(XOR_SCHEMA))
    sp = assign_ids(x, recs)
    env = UtilityEnv(XOR_SCHEMA)
    flip = next(r for r in sp.records if r.counterfactual.values == (25000.0, "1"))
    two = next(r for r in sp.records if r.counterfactual.values == (0.0, "1"))
    # grid order: (0,1) (25000,1) (50000,1) (75000,0) (100000,0); the flip is the
    # lowest-id single change
    assert [r.id for r in sp.records if r.n_changed() == 1] == [2, 4, 5]
    cert = certify_top_rank(sp, SPARSITY, flip, env)
    assert cert.top_ranked and cert.evaluations == len(sp) == 5
    assert dict(cert.utility_table) == {1: -2, 2: -1, 3: -2, 4: -1, 5: -1}
    bad = certify_top_rank(sp, SPARSITY, two, env)
    assert not bad.top_ranked and bad.counterexample.n_changed() == 1


def test_build_space_counts_and_ids():
    data = gen_synthetic_loan(120, 3)
    tr, te = data.split(100)
    models = [train_forest(tr, HyperParams(n_trees=5), s) for s in (1, 2)]
    methods = [MethodConfig("dice-random", FeatureMask.all(tr.schema), GenBudget(20, 4),
                            tuple(range(5))),
               MethodConfig("dice-random", FeatureMask.excluding(tr.schema, ["Gender"]),
                            GenBudget(20, 4), tuple(range(5)))]
    x = Instance(te.rows[0].values)
    sp = build_space(models, methods, x, tr)
    assert len(sp) + len(sp.manifest["failures"]) == 20
    assert [r.id for r in sp.records] == list(range(1, len(sp) + 1))
    keys = [r.provenance.sort_key() for r in sp.records]
    assert keys == sorted(keys)
    again = build_space(models, methods, x, tr)
    assert again.to_dict(tr.schema) == sp.to_dict(tr.schema)
    assert ExplanationSpace.from_dict(sp.to_dict(tr.schema), tr.schema) == sp
    one = build_space(models[:1], [MethodConfig("dice-random", FeatureMask.all(tr.schema),
                                                GenBudget(), tuple(range(10)))], x, tr)
    assert len(one) <= 10


def test_greedy_is_one_realisation():
    tr = gen_xor(40, 1)
    mc = MethodConfig("greedy-sparse", FeatureMask.all(XOR_SCHEMA), seeds=(1, 2, 3))
    sp = build_space([rule_model_xor()], [mc], XOR_SCHEMA.instance(10000, "0"), tr)
    assert len(sp) == 1


def test_empty_space():
    tr = gen_xor(40, 1)
    leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([0]))
    const = Model("forest", XOR_SCHEMA, make_normalization(tr), trees=[leaf])
    mc = MethodConfig("dice-random", FeatureMask.all(XOR_SCHEMA), GenBudget(1, 1), (0, 1))
    x = XOR_SCHEMA.instance(10000, "0")
    with pytest.raises(EmptySpace):
        build_space([const], [mc], x, tr)
    with pytest.raises(ValueError):
        build_space([], [mc], x, tr)


def test_unrestricted_methods_reach_the_whole_grid():
    """With unrestricted model and method sets on a finite grid, the space is the
    set of all valid grid points: nothing a provider might report lies outside
    it, so no finite search short of the whole space can rule cherry-picking out."""
    grid_vals = [0.0, 25000.0, 50000.0, 75000.0, 100000.0]
    train = Dataset(XOR_SCHEMA, tuple(Instance((v, g), 0) for v in grid_vals for g in "01"))
    m = rule_model_xor()
    x = XOR_SCHEMA.instance(25000, "0")
    mc = MethodConfig("dice-random", FeatureMask.all(XOR_SCHEMA), GenBudget(1, 2), tuple(range(60)))
    sp = build_space([m], [mc], x, train)
    reached = {r.counterfactual.values for r in sp.records}
    every = {r.counterfactual.values for r in
             exhaustive_enumerate(m, x, [grid_vals, ["0", "1"]], FeatureMask.all(XOR_SCHEMA))}
    assert reached == every


def test_record_ids_follow_literal_order(loan_space):
    assert [r.counterfactual.values[0] for r in loan_space.records] == [
        28000, 30000, 26000, 35000, 30000]
    assert all(isinstance(r, ExplanationRecord) for r in loan_space.records)
    assert loan_space.records[0].provenance == Provenance("literal", "literal", None, seed_index=0)


def test_policy_needs_sensitive_set():
    with pytest.raises(ValueError):
        ProviderPolicy("sensitive-avoiding")
