"""Synthetic benchmark worlds: determinism, label rules, serialization."""

import itertools
import json

import numpy as np
import pytest

from fanet.matrices import ValidationError
from fanet.seeding import instance_seed, stream_rng
from fanet.supervision import iou
from fanet.synthgen import (
    DocumentSpec,
    Instance,
    WorldSpec,
    default_document_spec,
    default_world_spec,
    generate_dataset,
    generate_document_instance,
    generate_instance,
    label_distribution,
    load_spec,
    read_jsonl,
    spec_to_dict,
    write_jsonl,
)


def tiny_world(**overrides):
    kw = dict(
        prototypes=3.0 * np.eye(6),
        affine_pairs=((0, 1), (2, 3)),
        signature_pairs=((0, 1),),
        noise_sigma=0.1,
        entities_min=4,
        entities_max=6,
    )
    kw.update(overrides)
    return WorldSpec(**kw)


class TestWorldSpec:
    def test_properties(self):
        spec = tiny_world()
        assert spec.n_categories == 6
        assert spec.embed_dim == 6
        assert spec.n_labels == 2
        assert spec.filler_categories == (2, 3, 4, 5)

    def test_scene_label_rule(self):
        spec = default_world_spec()
        assert spec.scene_label([0, 1, 6, 7]) == 1
        assert spec.scene_label([2, 3, 6]) == 2
        assert spec.scene_label([4, 5, 6, 7]) == 0  # (4,5) is not a signature
        # both signatures present: the lowest one wins
        assert spec.scene_label([2, 3, 0, 1]) == 1

    def test_rejects_self_pair(self):
        with pytest.raises(ValidationError):
            tiny_world(affine_pairs=((0, 0),))

    def test_rejects_out_of_range_pair(self):
        with pytest.raises(ValidationError):
            tiny_world(affine_pairs=((0, 6),))

    def test_rejects_signature_outside_affine(self):
        with pytest.raises(ValidationError):
            tiny_world(signature_pairs=((2, 4),))

    def test_rejects_shared_signature_category(self):
        with pytest.raises(ValidationError):
            tiny_world(
                affine_pairs=((0, 1), (1, 2)), signature_pairs=((0, 1), (1, 2))
            )

    def test_requires_filler_pool(self):
        with pytest.raises(ValidationError):
            WorldSpec(
                prototypes=np.eye(2),
                affine_pairs=((0, 1),),
                signature_pairs=((0, 1),),
                entities_min=2,
                entities_max=2,
            )

    def test_dict_roundtrip(self):
        spec = tiny_world()
        again = WorldSpec.from_dict(spec.to_dict())
        assert np.array_equal(again.prototypes, spec.prototypes)
        assert again.affine_pairs == spec.affine_pairs
        assert again.signature_pairs == spec.signature_pairs

    def test_from_dict_rejects_unknown_field(self):
        d = tiny_world().to_dict()
        d["entity_count"] = 5
        with pytest.raises(ValidationError, match="entity_count"):
            WorldSpec.from_dict(d)

    def test_from_dict_rejects_missing_field(self):
        d = tiny_world().to_dict()
        del d["affine_pairs"]
        with pytest.raises(ValidationError, match="affine_pairs"):
            WorldSpec.from_dict(d)


class TestGenerateInstance:
    def test_deterministic(self):
        spec = tiny_world()
        a = generate_instance(spec, seed=123)
        b = generate_instance(spec, seed=123)
        np.testing.assert_array_equal(a.entities.features, b.entities.features)
        np.testing.assert_array_equal(a.target, b.target)
        assert a.label == b.label
        assert a.gt_relations == b.gt_relations

    def test_seeds_differ(self):
        spec = tiny_world()
        a = generate_instance(spec, seed=1)
        b = generate_instance(spec, seed=2)
        assert not np.array_equal(a.entities.features, b.entities.features)

    @pytest.mark.parametrize("seed", range(8))
    def test_target_matches_category_affinity(self, seed):
        """Rebuild the target from categories; the stored one must agree."""
        spec = default_world_spec()
        inst = generate_instance(spec, seed)
        cats = inst.entities.categories
        affine = {frozenset(p) for p in spec.affine_pairs}
        n = inst.n
        expect = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            if frozenset((int(cats[i]), int(cats[j]))) in affine:
                expect[i, j] = expect[j, i] = 1.0
        np.testing.assert_array_equal(inst.target, expect)

    @pytest.mark.parametrize("seed", range(8))
    def test_label_matches_scene_rule(self, seed):
        spec = default_world_spec()
        inst = generate_instance(spec, seed)
        assert inst.label == spec.scene_label(inst.entities.categories)

    def test_boxes_are_disjoint(self):
        inst = generate_instance(default_world_spec(), seed=5)
        boxes = inst.entities.boxes
        for i, j in itertools.combinations(range(inst.n), 2):
            assert iou(boxes[i], boxes[j]) == 0.0

    def test_gt_relations_mirror_target(self):
        inst = generate_instance(default_world_spec(), seed=6)
        from_target = {
            (i, j)
            for i, j in itertools.combinations(range(inst.n), 2)
            if inst.target[i, j] == 1.0
        }
        assert {(r.subject, r.object) for r in inst.gt_relations} == from_target

    def test_gt_objects_cover_entities(self):
        inst = generate_instance(default_world_spec(), seed=7)
        objs = inst.gt_objects()
        assert len(objs) == inst.n
        for i, obj in enumerate(objs):
            assert obj.box == tuple(inst.entities.boxes[i])
            assert obj.category == int(inst.entities.categories[i])

    def test_entity_count_in_range(self):
        spec = tiny_world()
        for seed in range(20):
            n = generate_instance(spec, seed).n
            assert spec.entities_min <= n <= spec.entities_max


class TestDocumentInstances:
    def test_deterministic(self):
        spec = default_document_spec()
        a = generate_document_instance(spec, seed=11)
        b = generate_document_instance(spec, seed=11)
        np.testing.assert_array_equal(a.entities.features, b.entities.features)
        assert a.tokens == b.tokens and a.tags == b.tags

    def test_target_from_tag_table(self):
        spec = default_document_spec()
        inst = generate_document_instance(spec, seed=12)
        for i, j in itertools.combinations(range(inst.n), 2):
            expected = 1.0 if spec.table.contains(inst.tags[i], inst.tags[j]) else 0.0
            assert inst.target[i, j] == expected

    def test_no_boxes(self):
        inst = generate_document_instance(default_document_spec(), seed=13)
        assert inst.entities.boxes is None
        with pytest.raises(ValidationError):
            inst.gt_objects()


class TestGenerateDataset:
    def test_sizes_and_determinism(self):
        spec = tiny_world()
        tr1, te1 = generate_dataset(spec, 5, 3, seed=0)
        tr2, te2 = generate_dataset(spec, 5, 3, seed=0)
        assert len(tr1) == 5 and len(te1) == 3
        for a, b in zip(tr1 + te1, tr2 + te2):
            np.testing.assert_array_equal(a.entities.features, b.entities.features)

    def test_split_streams_disjoint(self):
        """Same index in train vs test must come from different draws."""
        tr, te = generate_dataset(tiny_world(), 4, 4, seed=0)
        for a, b in zip(tr, te):
            assert not np.array_equal(a.entities.features, b.entities.features)

    def test_master_seeds_disjoint(self):
        tr0, _ = generate_dataset(tiny_world(), 3, 1, seed=0)
        tr1, _ = generate_dataset(tiny_world(), 3, 1, seed=1)
        for a, b in zip(tr0, tr1):
            assert not np.array_equal(a.entities.features, b.entities.features)

    def test_rejects_empty_split(self):
        with pytest.raises(ValidationError):
            generate_dataset(tiny_world(), 0, 1, seed=0)

    def test_document_dispatch(self):
        tr, te = generate_dataset(default_document_spec(), 2, 2, seed=0)
        assert tr[0].tokens is not None

    def test_label_distribution(self):
        tr, _ = generate_dataset(tiny_world(), 40, 1, seed=0)
        dist = label_distribution(tr)
        assert sum(dist.values()) == 40
        assert set(dist) <= {0, 1}


class TestSeeding:
    def test_instance_seed_injective_at_small_scale(self):
        seen = set()
        for master in range(3):
            for split in (0, 1):
                for i in range(50):
                    seen.add(instance_seed(master, split, i))
        assert len(seen) == 3 * 2 * 50

    def test_stream_separation(self):
        a = stream_rng(1, 7).standard_normal(4)
        b = stream_rng(2, 7).standard_normal(4)
        assert not np.array_equal(a, b)

    def test_stream_rng_reproducible(self):
        a = stream_rng(3, 99).standard_normal(4)
        b = stream_rng(3, 99).standard_normal(4)
        np.testing.assert_array_equal(a, b)


class TestJsonl:
    def test_vision_roundtrip_is_exact(self, tmp_path):
        tr, _ = generate_dataset(default_world_spec(), 6, 1, seed=3)
        p = tmp_path / "train.jsonl"
        write_jsonl(p, tr)
        back = read_jsonl(p)
        assert len(back) == 6
        for a, b in zip(tr, back):
            np.testing.assert_array_equal(a.entities.features, b.entities.features)
            np.testing.assert_array_equal(a.entities.boxes, b.entities.boxes)
            np.testing.assert_array_equal(a.entities.categories, b.entities.categories)
            np.testing.assert_array_equal(a.target, b.target)
            assert a.label == b.label
            assert a.gt_relations == b.gt_relations

    def test_document_roundtrip(self, tmp_path):
        tr, _ = generate_dataset(default_document_spec(), 4, 1, seed=3)
        p = tmp_path / "train.jsonl"
        write_jsonl(p, tr)
        back = read_jsonl(p)
        for a, b in zip(tr, back):
            np.testing.assert_array_equal(a.entities.features, b.entities.features)
            assert a.tokens == b.tokens and a.tags == b.tags

    def test_write_read_write_is_stable(self, tmp_path):
        tr, _ = generate_dataset(tiny_world(), 3, 1, seed=1)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(p1, tr)
        write_jsonl(p2, read_jsonl(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_error_names_path_and_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"n_entities": 2}\nnot json\n')
        with pytest.raises(ValidationError, match="bad.jsonl"):
            read_jsonl(p)

    def test_error_on_garbage_second_line(self, tmp_path):
        tr, _ = generate_dataset(tiny_world(), 1, 1, seed=1)
        p = tmp_path / "bad.jsonl"
        write_jsonl(p, tr)
        with open(p, "a") as fh:
            fh.write("{broken\n")
        with pytest.raises(ValidationError, match="2"):
            read_jsonl(p)


class TestSpecSerialization:
    def test_load_spec_dispatch(self):
        w = load_spec(spec_to_dict(default_world_spec()))
        assert isinstance(w, WorldSpec)
        d = load_spec(spec_to_dict(default_document_spec()))
        assert isinstance(d, DocumentSpec)

    def test_load_spec_rejects_unknown_kind(self):
        with pytest.raises(ValidationError):
            load_spec({"kind": "audio"})

    def test_document_spec_roundtrip_generates_identically(self):
        spec = default_document_spec()
        again = load_spec(json.loads(json.dumps(spec_to_dict(spec))))
        a = generate_document_instance(spec, seed=5)
        b = generate_document_instance(again, seed=5)
        np.testing.assert_array_equal(a.entities.features, b.entities.features)


class TestInstanceValidation:
    def test_target_shape_checked(self):
        from fanet.attention import EntitySet

        ents = EntitySet(features=np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            Instance(entities=ents, target=np.zeros((2, 2)), label=0)

    def test_label_checked(self):
        from fanet.attention import EntitySet

        ents = EntitySet(features=np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            Instance(entities=ents, target=np.zeros((2, 2)), label=-1)
