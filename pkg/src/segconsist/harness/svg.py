"""Minimal SVG charts written as plain markup."""
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb")


def _doc(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "".join(body) + "</svg>\n")


def _text(x, y, s, anchor="middle", size=11, rotate=None):
    rot = f' transform="rotate({rotate} {x:.1f} {y:.1f})"' if rotate is not None else ""
    return (f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}"{rot}>'
            f"{escape(str(s))}</text>\n")


def bar_chart(groups, series, values, title="", ymax=1.0):
    """Grouped bars: ``values[i][j]`` is series ``j`` within group ``i``."""
    values = np.asarray(values, dtype=np.float64).reshape(len(groups), len(series))
    left, top, bottom, right = 50, 30, 90, 140
    bar_w, gap = 14, 12
    plot_w = len(groups) * (len(series) * bar_w + gap) + gap
    plot_h = 220
    width, height = left + plot_w + right, top + plot_h + bottom
    body = [_text(left + plot_w / 2, 18, title, size=13)]
    for t in np.linspace(0, ymax, 6):
        y = top + plot_h * (1 - t / ymax)
        body.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" stroke="#dddddd"/>\n')
        body.append(_text(left - 6, y + 4, f"{t:.1f}", anchor="end"))
    for i, g in enumerate(groups):
        x0 = left + gap + i * (len(series) * bar_w + gap)
        for j in range(len(series)):
            v = values[i, j]
            if not np.isfinite(v):
                continue
            h = plot_h * min(max(v, 0.0), ymax) / ymax
            body.append(f'<rect x="{x0 + j * bar_w:.1f}" y="{top + plot_h - h:.1f}" width="{bar_w - 1}" '
                        f'height="{h:.1f}" fill="{PALETTE[j % len(PALETTE)]}"/>\n')
        cx = x0 + len(series) * bar_w / 2
        body.append(_text(cx, top + plot_h + 12, g, anchor="end", size=9, rotate=-40))
    body.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>\n')
    for j, s in enumerate(series):
        y = top + 10 + 16 * j
        body.append(f'<rect x="{left + plot_w + 12}" y="{y - 9}" width="10" height="10" '
                    f'fill="{PALETTE[j % len(PALETTE)]}"/>\n')
        body.append(_text(left + plot_w + 26, y, s, anchor="start"))
    return _doc(width, height, body)


def heatmap(matrix, row_labels, col_labels, title="", vmin=0.0, vmax=1.0, cell=48, annotate=True):
    """Matrix as coloured cells (white to dark blue)."""
    m = np.asarray(matrix, dtype=np.float64)
    left, top = 70, 40
    width, height = left + cell * m.shape[1] + 20, top + cell * m.shape[0] + 20
    body = [_text(width / 2, 18, title, size=13)]
    for j, c in enumerate(col_labels):
        body.append(_text(left + (j + 0.5) * cell, top - 6, c))
    for i, r in enumerate(row_labels):
        body.append(_text(left - 6, top + (i + 0.5) * cell + 4, r, anchor="end"))
        for j in range(m.shape[1]):
            t = 0.0 if not np.isfinite(m[i, j]) else float(np.clip((m[i, j] - vmin) / (vmax - vmin), 0, 1))
            rgb = tuple(int(round(255 - t * (255 - c))) for c in (0x22, 0x44, 0x88))
            body.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                        f'fill="rgb{rgb}" stroke="white"/>\n')
            if annotate:
                colour = "white" if t > 0.55 else "black"
                body.append(f'<text x="{left + (j + 0.5) * cell:.1f}" y="{top + (i + 0.5) * cell + 4:.1f}" '
                            f'text-anchor="middle" fill="{colour}">{m[i, j]:.2f}</text>\n')
    return _doc(width, height, body)


def line_chart(curves, title="", xlabel="", ylabel="", xlim=(0.0, 1.0), ylim=(0.0, 1.0)):
    """``curves`` maps a legend label to ``(xs, ys)``."""
    left, top, size, right = 50, 30, 240, 150
    width, height = left + size + right, top + size + 45
    sx = lambda x: left + size * (x - xlim[0]) / (xlim[1] - xlim[0])
    sy = lambda y: top + size * (1 - (y - ylim[0]) / (ylim[1] - ylim[0]))
    body = [_text(left + size / 2, 18, title, size=13),
            f'<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>\n',
            _text(left + size / 2, top + size + 30, xlabel),
            _text(14, top + size / 2, ylabel, rotate=-90)]
    for k, (label, (xs, ys)) in enumerate(curves.items()):
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        colour = PALETTE[k % len(PALETTE)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>\n')
        y = top + 10 + 16 * k
        body.append(f'<line x1="{left + size + 10}" y1="{y - 4}" x2="{left + size + 24}" y2="{y - 4}" '
                    f'stroke="{colour}" stroke-width="2"/>\n')
        body.append(_text(left + size + 28, y, label, anchor="start"))
    return _doc(width, height, body)


def colormap(values, vmin=0.0, vmax=1.0):
    """Scalar field to an (H, W, 3) image in [0, 1] (black-red-yellow-white ramp)."""
    t = np.clip((np.asarray(values, dtype=np.float64) - vmin) / max(vmax - vmin, 1e-12), 0, 1)
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.stack([r, g, b], axis=-1)


def write_svg(path, markup):
    from .io import _write_bytes

    _write_bytes(path, markup.encode("utf-8"))
