"""Slow, obviously-correct reference implementations used to cross-check the metrics."""


def runs(labels):
    """(class, start, end) runs, written without numpy."""
    out = []
    for i, c in enumerate(labels):
        if out and out[-1][0] == c:
            out[-1][2] = i + 1
        else:
            out.append([c, i, i + 1])
    return [tuple(r) for r in out]


def accuracy(pred, gt):
    return 100.0 * sum(int(p == g) for p, g in zip(pred, gt)) / len(gt)


def levenshtein(a, b):
    rows = [[i + j if i == 0 or j == 0 else 0 for j in range(len(b) + 1)] for i in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            rows[i][j] = min(rows[i - 1][j] + 1, rows[i][j - 1] + 1, rows[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return rows[len(a)][len(b)]


def edit(pred, gt):
    rp, rg = [r[0] for r in runs(pred)], [r[0] for r in runs(gt)]
    return 100.0 * (1 - levenshtein(rp, rg) / max(len(rp), len(rg)))


def frame_iou(a, b):
    fa, fb = set(range(a[1], a[2])), set(range(b[1], b[2]))
    return len(fa & fb) / len(fa | fb)


def greedy_counts(pred, gt, tau):
    P, G = runs(pred), runs(gt)
    used = set()
    tp = 0
    for p in P:
        best, best_iou = None, -1.0
        for j, g in enumerate(G):
            if g[0] != p[0] or j in used:
                continue
            iou = frame_iou(p, g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best is not None and best_iou >= tau:
            used.add(best)
            tp += 1
    return tp, len(P) - tp, len(G) - len(used)


def f1(pred, gt, tau):
    tp, fp, fn = greedy_counts(pred, gt, tau)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 100.0 * 2 * precision * recall / (precision + recall) if precision + recall else 0.0
