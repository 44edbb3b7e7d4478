import numpy as np
import pytest

from conftest import clustered_kb, make_matrix, make_meme
from memekit import fusion
from memekit.thresholds import build_profiles
from memekit.tlc import (
    BACKOFF_NONE,
    BACKOFF_OOD,
    BACKOFF_UNSEEN,
    OOD_MAJ,
    OOD_NORM,
    OOD_RAND,
    VOTE_LABEL,
    VOTE_TEMPLATE,
    TlcModel,
    build_reference,
    load_model,
    save_model,
    tlc_fit,
    tlc_predict,
    tlc_predict_late_fusion,
)
from oracles import majority_first_seen, two_pass_distance

A, B, C = (1, 0, 0), (0, 1, 0), (0, 0, 1)
LABELS = (A, B, C)


def five_cluster_world(rng, n_train=200, n_test=50, dim=8, include_examples=False):
    """Separated clusters with cluster-pure labels."""
    templates, kb_matrix, centers = clustered_kb(5, 4, dim, spread=1.0, rng=rng)
    rows, records = [], []
    for i in range(n_train + n_test):
        c = i % 5
        rows.append(centers[c] + rng.normal(0.0, 0.1, size=dim))
        records.append(
            make_meme(f"m{i:03d}", image_row=i, labels=LABELS[c % 3], ocr=f"cluster {c}")
        )
    ds_matrix = make_matrix(np.asarray(rows))
    index = build_reference(templates, kb_matrix, fusion.IMAGE_ONLY, include_examples)
    return templates, kb_matrix, index, records[:n_train], records[n_train:], ds_matrix, centers


def oracle_neighbors(index, q, k):
    """Full-sort kNN over the index entries, ties by row id."""
    scored = sorted(
        (two_pass_distance(index.vectors[i], q), int(index.row_ids[i]), index.parents[i])
        for i in range(index.size)
    )
    return scored[:k]


def oracle_vote(model, neighbors, mode):
    voting = []
    for _, _, tid in neighbors:
        if tid not in voting and tid in model.tallies:
            voting.append(tid)
    if not voting:
        return None
    nearest_label = model.majority[voting[0]]
    pool = {}
    if mode == VOTE_TEMPLATE:
        for tid in voting:
            label = model.majority[tid]
            pool[label] = pool.get(label, 0) + 1
    else:
        for tid in voting:
            for label, count in model.tallies[tid].items():
                pool[label] = pool.get(label, 0) + count
    best = max(pool.values())
    tied = [label for label, count in pool.items() if count == best]
    return nearest_label if nearest_label in tied else tied[0]


class TestFit:
    def test_single_template_majority(self):
        templates, matrix, _ = clustered_kb(1, 0, 2, spread=1.0, rng=np.random.default_rng(0))
        index = build_reference(templates, matrix, fusion.IMAGE_ONLY, False)
        ds = make_matrix([[0.1, 0.0], [0.2, 0.0], [0.0, 0.1]])
        train = [
            make_meme("x", 0, labels=A),
            make_meme("y", 1, labels=A),
            make_meme("z", 2, labels=B),
        ]
        model = tlc_fit(train, index, ds, fusion.IMAGE_ONLY, False)
        assert model.majority[templates[0].template_id] == A
        assert model.global_majority == A

    def test_two_templates_one_item_each(self):
        rng = np.random.default_rng(1)
        templates, kb_matrix, centers = clustered_kb(2, 0, 4, spread=1.0, rng=rng)
        index = build_reference(templates, kb_matrix, fusion.IMAGE_ONLY, False)
        ds = make_matrix(np.asarray([centers[0], centers[1]]))
        train = [make_meme("x", 0, labels=A), make_meme("y", 1, labels=B)]
        model = tlc_fit(train, index, ds, fusion.IMAGE_ONLY, False)
        assert model.majority[templates[0].template_id] == A
        assert model.majority[templates[1].template_id] == B

    def test_majority_map_matches_brute_force_retally(self):
        rng = np.random.default_rng(2)
        templates, kb_matrix, index, train, _, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False)
        # Oracle: assign every training item from scratch, then re-tally.
        tally = {}
        for rec in train:
            d, _, tid = oracle_neighbors(index, ds_matrix.row(rec.image_row), 1)[0]
            tally.setdefault(tid, []).append(rec.labels)
        assert set(model.tallies) == set(tally)
        for tid, labels in tally.items():
            assert model.majority[tid] == majority_first_seen(labels)
        assert model.global_majority == majority_first_seen(
            [rec.labels for rec in train]
        )

    def test_empty_training_rejected(self):
        rng = np.random.default_rng(3)
        templates, kb_matrix, index, _, _, ds_matrix, _ = five_cluster_world(rng)
        with pytest.raises(ValueError):
            tlc_fit([], index, ds_matrix, fusion.IMAGE_ONLY, False)

    def test_majority_tie_prefers_first_seen(self):
        templates, matrix, _ = clustered_kb(1, 0, 2, spread=1.0, rng=np.random.default_rng(4))
        index = build_reference(templates, matrix, fusion.IMAGE_ONLY, False)
        ds = make_matrix([[0.0, 0.1], [0.0, 0.2]])
        model = tlc_fit(
            [make_meme("x", 0, labels=B), make_meme("y", 1, labels=A)],
            index, ds, fusion.IMAGE_ONLY, False,
        )
        assert model.majority[templates[0].template_id] == B


class TestPredict:
    def test_training_vector_gets_its_templates_majority(self):
        rng = np.random.default_rng(5)
        _, _, index, train, _, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False)
        rec = train[0]
        pred = tlc_predict(model, rec, index, ds_matrix)
        assert pred.labels == rec.labels
        assert pred.backoff_reason == BACKOFF_NONE

    def test_unseen_template_backs_off_to_global_majority(self):
        rng = np.random.default_rng(6)
        templates, kb_matrix, centers = clustered_kb(3, 0, 4, spread=1.0, rng=rng)
        index = build_reference(templates, kb_matrix, fusion.IMAGE_ONLY, False)
        ds = make_matrix(np.asarray([centers[0], centers[1], centers[2]]))
        train = [make_meme("x", 0, labels=A), make_meme("y", 1, labels=A)]
        model = tlc_fit(train, index, ds, fusion.IMAGE_ONLY, False)
        pred = tlc_predict(model, make_meme("q", 2, labels=B), index, ds)
        assert pred.labels == model.global_majority == A
        assert pred.backoff_reason == BACKOFF_UNSEEN
        assert pred.matched_template_id == templates[2].template_id

    def test_k1_accuracy_one_on_separated_clusters(self):
        rng = np.random.default_rng(7)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=1)
        correct = sum(
            tlc_predict(model, rec, index, ds_matrix).labels == rec.labels for rec in test
        )
        assert correct == len(test)

    @pytest.mark.parametrize("vote_mode", [VOTE_TEMPLATE, VOTE_LABEL])
    def test_k3_votes_match_brute_force_oracle(self, vote_mode):
        rng = np.random.default_rng(8)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=3, vote_mode=vote_mode)
        for rec in test:
            pred = tlc_predict(model, rec, index, ds_matrix)
            want = oracle_vote(model, oracle_neighbors(index, ds_matrix.row(rec.image_row), 3), vote_mode)
            assert pred.labels == want

    def test_template_vote_k1_equals_label_vote_k1(self):
        rng = np.random.default_rng(9)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        m_t = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=1, vote_mode=VOTE_TEMPLATE)
        m_l = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=1, vote_mode=VOTE_LABEL)
        for rec in test:
            assert tlc_predict(m_t, rec, index, ds_matrix) == tlc_predict(m_l, rec, index, ds_matrix)

    def test_k_larger_than_index_rejected(self):
        rng = np.random.default_rng(10)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=index.size + 1)
        with pytest.raises(ValueError):
            tlc_predict(model, test[0], index, ds_matrix)

    def test_deterministic_predictions(self):
        rng = np.random.default_rng(11)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=3, vote_mode=VOTE_LABEL)
        first = [tlc_predict(model, rec, index, ds_matrix) for rec in test]
        second = [tlc_predict(model, rec, index, ds_matrix) for rec in test]
        assert first == second


class TestOODModes:
    def world_with_far_item(self, rng, ood_mode):
        templates, kb_matrix, index, train, _, ds_matrix, centers = five_cluster_world(rng)
        profiles, _ = build_profiles(
            [t for t in templates], kb_matrix, "max"
        )
        model = tlc_fit(
            train, index, ds_matrix, fusion.IMAGE_ONLY, False, ood_mode=ood_mode, seed=99
        )
        far_matrix = make_matrix(np.vstack([ds_matrix.data, np.full((1, 8), 400.0, dtype=np.float32)]))
        far = make_meme("far", far_matrix.n_rows - 1, labels=A)
        return templates, index, model, profiles, far, far_matrix

    def test_maj_backs_off_to_global_majority(self):
        rng = np.random.default_rng(12)
        _, index, model, profiles, far, matrix = self.world_with_far_item(rng, OOD_MAJ)
        pred = tlc_predict(model, far, index, matrix, profiles)
        assert pred.labels == model.global_majority
        assert pred.backoff_reason == BACKOFF_OOD

    def test_rand_draws_from_training_multiset_deterministically(self):
        rng = np.random.default_rng(13)
        _, index, model, profiles, far, matrix = self.world_with_far_item(rng, OOD_RAND)
        a = tlc_predict(model, far, index, matrix, profiles)
        b = tlc_predict(model, far, index, matrix, profiles)
        assert a == b
        assert a.backoff_reason == BACKOFF_OOD
        assert a.labels in model.training_labels

    def test_norm_mode_ignores_distance(self):
        rng = np.random.default_rng(14)
        _, index, model, profiles, far, matrix = self.world_with_far_item(rng, OOD_NORM)
        pred = tlc_predict(model, far, index, matrix)
        assert pred.backoff_reason == BACKOFF_NONE

    def test_ood_modes_require_profiles(self):
        rng = np.random.default_rng(15)
        _, index, model, _, far, matrix = self.world_with_far_item(rng, OOD_MAJ)
        with pytest.raises(ValueError):
            tlc_predict(model, far, index, matrix, max_profiles=None)

    def test_near_item_is_not_gated(self):
        rng = np.random.default_rng(16)
        templates, kb_matrix, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        profiles, _ = build_profiles(templates, kb_matrix, "max")
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, ood_mode=OOD_MAJ)
        pred = tlc_predict(model, test[0], index, ds_matrix, profiles)
        assert pred.backoff_reason == BACKOFF_NONE


def manual_model(tallies, global_majority, **overrides):
    majority = {tid: majority_first_seen([l for l, c in t.items() for _ in range(c)]) for tid, t in tallies.items()}
    training = {}
    for t in tallies.values():
        for label, count in t.items():
            training[label] = training.get(label, 0) + count
    defaults = dict(
        tallies=tallies,
        majority=majority,
        global_majority=global_majority,
        training_labels=training,
        fusion_mode=fusion.IMAGE_ONLY,
        include_examples=False,
        k=1,
        vote_mode=VOTE_LABEL,
        ood_mode=OOD_NORM,
        seed=0,
    )
    defaults.update(overrides)
    return TlcModel(**defaults)


class TestLateFusion:
    def two_sided_world(self):
        """Image rows at x=0/x=10, text rows at y=0/y=10; 2 templates."""
        from conftest import make_template

        kb = make_matrix([[0.0, 0.0], [10.0, 0.0], [0.0, 5.0], [10.0, 5.0]])
        t1 = make_template("t1", image_row=0, text_row=2)
        t2 = make_template("t2", image_row=1, text_row=3)
        index_img = build_reference([t1, t2], kb, fusion.IMAGE_ONLY, False)
        index_txt = build_reference([t1, t2], kb, fusion.TEXT_ONLY, False)
        return t1, t2, index_img, index_txt

    def test_agreeing_modalities(self):
        t1, t2, index_img, index_txt = self.two_sided_world()
        model_img = manual_model({"t1": {A: 2}}, A)
        model_txt = manual_model({"t1": {A: 1}}, A, fusion_mode=fusion.TEXT_ONLY)
        ds = make_matrix([[0.1, 0.0], [0.1, 5.0]])
        rec = make_meme("q", image_row=0, text_row=1, labels=A)
        pred = tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds)
        assert pred.labels == A
        assert pred.backoff_reason == BACKOFF_NONE

    def test_disjoint_pools_larger_side_wins(self):
        # image pool has 3 votes for A, text pool 2 votes for B
        t1, t2, index_img, index_txt = self.two_sided_world()
        model_img = manual_model({"t1": {A: 3}}, A)
        model_txt = manual_model({"t2": {B: 2}}, B, fusion_mode=fusion.TEXT_ONLY)
        ds = make_matrix([[0.1, 0.0], [9.9, 5.0]])
        rec = make_meme("q", image_row=0, text_row=1, labels=A)
        pred = tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds)
        assert pred.labels == A

    def test_tie_prefers_image_side_nearest_template(self):
        t1, t2, index_img, index_txt = self.two_sided_world()
        model_img = manual_model({"t1": {A: 2}}, A)
        model_txt = manual_model({"t2": {B: 2}}, B, fusion_mode=fusion.TEXT_ONLY)
        ds = make_matrix([[0.1, 0.0], [9.9, 5.0]])
        rec = make_meme("q", image_row=0, text_row=1, labels=A)
        pred = tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds)
        assert pred.labels == A  # 2-2 tie, image nearest fitted template has A

    def test_missing_text_degrades_to_image_label_vote(self):
        t1, t2, index_img, index_txt = self.two_sided_world()
        model_img = manual_model({"t1": {A: 1, B: 2}}, B)
        model_txt = manual_model({"t2": {A: 5}}, A, fusion_mode=fusion.TEXT_ONLY)
        ds = make_matrix([[0.1, 0.0]])
        rec = make_meme("q", image_row=0, text_row=None, labels=B)
        pred = tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds)
        assert pred.labels == B  # text side contributes nothing

    def test_both_templates_unseen_backs_off(self):
        t1, t2, index_img, index_txt = self.two_sided_world()
        model_img = manual_model({"ghost": {A: 1}}, A)
        model_txt = manual_model({"ghost": {B: 1}}, B, fusion_mode=fusion.TEXT_ONLY)
        ds = make_matrix([[0.1, 0.0], [0.1, 5.0]])
        rec = make_meme("q", image_row=0, text_row=1, labels=A)
        pred = tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds)
        assert pred.backoff_reason == BACKOFF_UNSEEN
        assert pred.labels == model_img.global_majority


class TestFusedPrediction:
    def test_concat_mode_runs_end_to_end(self):
        rng = np.random.default_rng(17)
        templates, kb_matrix, centers = clustered_kb(3, 2, 4, spread=0.5, rng=rng)
        # give each template a text row reusing its own image row
        from conftest import make_template

        templates = [
            make_template(
                t.template_id,
                image_row=t.image_row,
                example_rows=t.example_image_rows,
                text_row=t.image_row,
                example_text_rows=t.example_image_rows,
            )
            for t in templates
        ]
        index = build_reference(templates, kb_matrix, fusion.CONCAT, False)
        assert index.dim == 8
        rows = np.asarray([centers[i % 3] + rng.normal(0, 0.1, 4) for i in range(12)])
        ds = make_matrix(rows)
        train = [
            make_meme(f"m{i}", image_row=i, text_row=i, labels=LABELS[i % 3]) for i in range(12)
        ]
        model = tlc_fit(train, index, ds, fusion.CONCAT, False)
        pred = tlc_predict(model, train[0], index, ds)
        assert pred.labels == train[0].labels

    def test_missing_modality_raises(self):
        rng = np.random.default_rng(18)
        _, _, index, train, _, ds_matrix, _ = five_cluster_world(rng)
        with pytest.raises(fusion.FusionError):
            tlc_fit(train, index, ds_matrix, fusion.CONCAT, False)


class TestModelIO:
    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(19)
        _, _, index, train, test, ds_matrix, _ = five_cluster_world(rng)
        model = tlc_fit(train, index, ds_matrix, fusion.IMAGE_ONLY, False, k=3, vote_mode=VOTE_LABEL)
        path = tmp_path / "model.json"
        save_model(model, path)
        reloaded = load_model(path)
        for rec in test:
            assert tlc_predict(model, rec, index, ds_matrix) == tlc_predict(
                reloaded, rec, index, ds_matrix
            )

    def test_round_trip_preserves_tally_order(self, tmp_path):
        model = manual_model({"t1": {B: 1, A: 1}}, B)
        path = tmp_path / "model.json"
        save_model(model, path)
        reloaded = load_model(path)
        assert list(reloaded.tallies["t1"]) == [B, A]
        assert reloaded.majority["t1"] == B
