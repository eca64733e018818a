#!/usr/bin/env python3
"""Regenerates the checked-in test fixtures. Output is deterministic."""

import json
import pathlib

from PIL import Image, ImageDraw

HERE = pathlib.Path(__file__).resolve().parent

CLASSES = [
    {"id": 0, "name": "black_pod", "aliases": ["black pod", "blackpod", "fitoftora", "phytophthora"]},
    {"id": 1, "name": "monilia", "aliases": ["moniliasis", "moniliophthora"]},
    {"id": 2, "name": "healthy", "aliases": ["healthy pod", "sana"]},
]

# Per class: ground-truth count and the ranked TP/FP pattern of its detections.
PATTERNS = {
    0: (4, "TFT"),
    1: (5, "TFFFFT"),
    2: (5, "FTTFFFFT"),
}


def slot(i):
    col, row = i % 8, i // 8
    x, y = col * 80.0, row * 80.0
    return {"x_min": x, "y_min": y, "x_max": x + 60.0, "y_max": y + 60.0}


def reference_fixture():
    images, annotations, detections = [], [], []
    for cls, (gt_count, pattern) in PATTERNS.items():
        image_id = f"val_{CLASSES[cls]['name']}"
        images.append({"id": image_id, "path": f"images/{image_id}.png",
                       "width": 640, "height": 640, "split": "validation"})
        for g in range(gt_count):
            annotations.append({"image_id": image_id, "class_id": cls,
                                "box": slot(g), "convention": "pixel"})
        tp = 0
        fp = 0
        for k, kind in enumerate(pattern):
            score = round(0.95 - 0.05 * k, 2)
            if kind == "T":
                box = slot(tp)
                tp += 1
            else:
                box = slot(32 + fp)
                fp += 1
            detections.append({"image_id": image_id, "class_id": cls, "score": score,
                               "box": box, "convention": "pixel"})
    images.append({"id": "train_0", "path": "images/train_0.png",
                   "width": 640, "height": 640, "split": "train"})
    annotations.append({"image_id": "train_0", "class_id": 2,
                        "box": slot(0), "convention": "pixel"})
    detections.sort(key=lambda d: (d["image_id"], -d["score"]))
    manifest = {"schema": "pod-sentry/manifest@1", "classes": CLASSES,
                "images": images, "annotations": annotations}
    dets = {"schema": "pod-sentry/detections@1", "detections": detections}
    return manifest, dets


def healthy_pod_image():
    img = Image.new("RGB", (800, 600), (74, 52, 36))
    d = ImageDraw.Draw(img)
    d.ellipse((290, 110, 520, 500), fill=(156, 178, 60), outline=(96, 120, 40), width=6)
    for k in range(5):
        x = 330 + 40 * k
        d.line((x, 130, x, 480), fill=(130, 150, 50), width=3)
    d.rectangle((395, 60, 410, 112), fill=(90, 70, 40))
    return img


def healthy_pod_detections():
    # Boxes live in the processed 640x640 frame the backend sees.
    box = {"x_min": 230.0, "y_min": 120.0, "x_max": 420.0, "y_max": 520.0}
    dets = [
        {"image_id": "healthy_pod", "class_id": 2, "score": 0.96, "box": box, "convention": "pixel"},
        {"image_id": "healthy_pod", "class_id": 1, "score": 0.02, "box": box, "convention": "pixel"},
        {"image_id": "healthy_pod", "class_id": 0, "score": 0.02, "box": box, "convention": "pixel"},
    ]
    return {"schema": "pod-sentry/detections@1", "detections": dets}


def dump(path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n")


def main():
    manifest, dets = reference_fixture()
    dump(HERE / "reference_manifest.json", manifest)
    dump(HERE / "reference_detections.json", dets)
    healthy_pod_image().save(HERE / "healthy_pod.png", optimize=False, compress_level=6)
    dump(HERE / "healthy_pod_detections.json", healthy_pod_detections())


if __name__ == "__main__":
    main()
