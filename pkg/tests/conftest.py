"""
Shared pytest fixtures.
"""
import json
import logging

import pytest

ABLATION_IMAGES = 20
ABLATION_CLASSES = 8
ABLATION_MODELS = 3


@pytest.fixture(autouse=True)
def reset_package_logger():
    """Undo Config.setup_logging so caplog sees records in every test."""
    yield
    package_logger = logging.getLogger("src")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    package_logger.setLevel(logging.NOTSET)
    package_logger.propagate = True


@pytest.fixture
def write_json(tmp_path):
    """Write a JSON document under tmp_path and return its path."""
    def _write(name, document):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document), encoding="utf-8")
        return path
    return _write


def _gt_box(category_index):
    return [category_index * 60 + 5, 10, 40, 40]


@pytest.fixture
def ablation_dataset(tmp_path, write_json):
    """
    20 images, 8 classes, one ground-truth box per (image, class).

    Model k finds the box when (image + class) % 3 == k; on every fourth
    image all three models find everything. Each model alone misses part of
    every class, while the union covers all of it once duplicates merge.

    Returns the path of a run config referencing the files.
    """
    images = [{"id": i, "width": 640, "height": 480, "file_name": f"{i:03d}.png"}
              for i in range(ABLATION_IMAGES)]
    categories = [{"id": c + 1, "name": f"class_{c}"} for c in range(ABLATION_CLASSES)]
    annotations = []
    for i in range(ABLATION_IMAGES):
        for c in range(ABLATION_CLASSES):
            annotations.append({"id": len(annotations) + 1, "image_id": i,
                                "category_id": c + 1, "bbox": _gt_box(c)})
    write_json("gt.json", {"images": images, "annotations": annotations, "categories": categories})

    inputs = []
    for k in range(ABLATION_MODELS):
        records = []
        for i in range(ABLATION_IMAGES):
            for c in range(ABLATION_CLASSES):
                if (i + c) % ABLATION_MODELS == k or i % 4 == 0:
                    records.append({"image_id": i, "category_id": c + 1,
                                    "bbox": _gt_box(c), "score": 0.9 - 0.1 * k})
        write_json(f"preds/model_{k}.json", records)
        inputs.append({"label": f"model_{k}", "path": f"preds/model_{k}.json"})

    return write_json("run.json", {
        "fusion": {"metric": "iou", "overlap_threshold": 0.5},
        "inputs": inputs,
        "ground_truth": "gt.json",
        "output": {"fused": "out/fused.json", "report": "out/ablation.json"},
    })
