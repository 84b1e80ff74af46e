"""Independent brute-force reference implementations used as test oracles.

The LBP-TOP reference below recomputes everything with plain Python loops:
per-center, per-plane, per-neighbor sampling into per-block histograms. It
shares only the documented conventions with the library (neighbor angles,
the 1e-9 integer snap, the canonical bilinear expression, block spans), so a
bin-for-bin comparison checks the vectorized path exactly.
"""

import math


def _snap(value):
    rounded = round(value)
    return float(rounded) if abs(value - rounded) < 1e-9 else value


def _block_spans(extent, n_blocks, overlap):
    size = math.ceil((extent + (n_blocks - 1) * overlap) / n_blocks)
    size = min(size, extent)
    step = size - overlap
    assert step > 0, "overlap must be smaller than the block size"
    return [(min(i * step, extent - size), min(i * step, extent - size) + size)
            for i in range(n_blocks)]


def _neighbor_offsets(ru, rv, p_count):
    """Per neighbor: integer parts and fractional parts of the (u, v) offset."""
    out = []
    for p in range(p_count):
        theta = 2.0 * math.pi * p / p_count
        du = _snap(ru * math.cos(theta))
        dv = _snap(rv * math.sin(theta))
        iu, iv = math.floor(du), math.floor(dv)
        out.append((iu, du - iu, iv, dv - iv))
    return out


def _bilinear(g00, g01, g10, g11, fu, fv):
    return g00 + fu * (g01 - g00) + fv * (g10 - g00) + fu * fv * (((g00 - g01) - g10) + g11)


def lbp_top_reference(volume, radii, neighbors=(8, 8, 8), blocks=(5, 5), overlap=0):
    """Triple-loop LBP-TOP feature vector over a T x H x W uint8 array.

    Returns a plain list of floats in the library's concatenation order:
    row-major blocks x (XY, XT, YT) x bins.
    """
    t_len = len(volume)
    h = len(volume[0])
    w = len(volume[0][0])
    vol = [[[float(v) for v in row] for row in frame] for frame in volume]

    rx, ry, rt = radii
    p_xy, p_xt, p_yt = neighbors
    bx, by = blocks

    off_xy = _neighbor_offsets(rx, ry, p_xy)
    off_xt = _neighbor_offsets(rx, rt, p_xt)
    off_yt = _neighbor_offsets(ry, rt, p_yt)

    x_spans = _block_spans(w, bx, overlap)
    y_spans = _block_spans(h, by, overlap)

    out = []
    for (y0, y1) in y_spans:
        ya, yb = max(y0, ry), min(y1, h - ry)
        for (x0, x1) in x_spans:
            xa, xb = max(x0, rx), min(x1, w - rx)
            assert yb > ya and xb > xa, "empty block"
            h_xy = [0] * (1 << p_xy)
            h_xt = [0] * (1 << p_xt)
            h_yt = [0] * (1 << p_yt)
            count = 0
            for t in range(rt, t_len - rt):
                frame = vol[t]
                for y in range(ya, yb):
                    row = frame[y]
                    for x in range(xa, xb):
                        center = row[x]
                        count += 1

                        code = 0
                        for p, (iu, fu, iv, fv) in enumerate(off_xy):
                            u0, v0 = x + iu, y + iv
                            u1 = u0 + 1 if u0 + 1 < w else w - 1
                            v1 = v0 + 1 if v0 + 1 < h else h - 1
                            g = _bilinear(frame[v0][u0], frame[v0][u1],
                                          frame[v1][u0], frame[v1][u1], fu, fv)
                            if g - center >= 0:
                                code += 1 << p
                        h_xy[code] += 1

                        code = 0
                        for p, (iu, fu, iv, fv) in enumerate(off_xt):
                            u0, v0 = x + iu, t + iv
                            u1 = u0 + 1 if u0 + 1 < w else w - 1
                            v1 = v0 + 1 if v0 + 1 < t_len else t_len - 1
                            g = _bilinear(vol[v0][y][u0], vol[v0][y][u1],
                                          vol[v1][y][u0], vol[v1][y][u1], fu, fv)
                            if g - center >= 0:
                                code += 1 << p
                        h_xt[code] += 1

                        code = 0
                        for p, (iu, fu, iv, fv) in enumerate(off_yt):
                            u0, v0 = y + iu, t + iv
                            u1 = u0 + 1 if u0 + 1 < h else h - 1
                            v1 = v0 + 1 if v0 + 1 < t_len else t_len - 1
                            g = _bilinear(vol[v0][u0][x], vol[v0][u1][x],
                                          vol[v1][u0][x], vol[v1][u1][x], fu, fv)
                            if g - center >= 0:
                                code += 1 << p
                        h_yt[code] += 1

            for hist in (h_xy, h_xt, h_yt):
                out.extend(v / count for v in hist)
    return out


def lbp_code_reference(samples, center):
    """Eq.-style LBP code from already-sampled neighbor gray values."""
    code = 0
    for p, g in enumerate(samples):
        if g - center >= 0:
            code += 2 ** p
    return code
