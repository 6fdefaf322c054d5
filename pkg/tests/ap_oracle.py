"""Independent brute-force average-precision oracle shared by test modules.

Deliberately written apart from the production evaluator: its own greedy
matcher plus an O(n^2) enumeration of max-precision-at-recall>=r over the
distinct recall levels.
"""

import numpy as np

from upre.world import iou


def oracle_ap(predictions, ground_truth, iou_thresh=0.5):
    out = {}
    for cat in sorted({g.category for g in ground_truth}):
        gts = [g for g in ground_truth if g.category == cat]
        preds = sorted([p for p in predictions if p.category == cat], key=lambda p: -p.score)
        if not preds:
            out[cat] = 0.0
            continue
        taken = [False] * len(gts)
        flags = []
        for p in preds:
            ious = [iou(p.box, g.box) if g.scene_id == p.scene_id else 0.0 for g in gts]
            best = int(np.argmax(ious)) if ious else -1
            if best >= 0 and ious[best] >= iou_thresh and not taken[best]:
                taken[best] = True
                flags.append(True)
            else:
                flags.append(False)
        precisions, recalls = [], []
        tp = 0
        for k, f in enumerate(flags, start=1):
            tp += int(f)
            precisions.append(tp / k)
            recalls.append(tp / len(gts))
        ap = 0.0
        prev = 0.0
        for r in sorted(set(recalls)):
            if r <= prev:
                continue
            p_at = max(p for p, rr in zip(precisions, recalls) if rr >= r)
            ap += (r - prev) * p_at
            prev = r
        out[cat] = ap
    mean = float(np.mean(list(out.values()))) if out else 0.0
    return out, mean


def random_instance(rng):
    """Small random detection instance: <=5 ground truths, <=8 predictions."""
    from upre.world import GroundTruth, Prediction

    cats = ["car", "bus"]
    n_gt = int(rng.integers(1, 6)[0])
    n_pred = int(rng.integers(0, 9)[0])
    gts, preds = [], []
    for _ in range(n_gt):
        x = float(rng.uniform(1)[0] * 20)
        y = float(rng.uniform(1)[0] * 20)
        w = 2 + float(rng.uniform(1)[0] * 6)
        h = 2 + float(rng.uniform(1)[0] * 6)
        gts.append(GroundTruth(int(rng.integers(0, 2)[0]), cats[rng.choice(2)], (x, y, x + w, y + h)))
    for _ in range(n_pred):
        if rng.bernoulli(0.6) and gts:
            base = gts[rng.choice(len(gts))]
            bx = np.array(base.box) + rng.normal(4) * 1.5
            box = (
                float(min(bx[0], bx[2] - 1)),
                float(min(bx[1], bx[3] - 1)),
                float(max(bx[2], bx[0] + 1)),
                float(max(bx[3], bx[1] + 1)),
            )
            preds.append(Prediction(base.scene_id, cats[rng.choice(2)], float(rng.uniform(1)[0]), box))
        else:
            x = float(rng.uniform(1)[0] * 20)
            y = float(rng.uniform(1)[0] * 20)
            preds.append(
                Prediction(
                    int(rng.integers(0, 2)[0]), cats[rng.choice(2)], float(rng.uniform(1)[0]), (x, y, x + 3, y + 3)
                )
            )
    return preds, gts
