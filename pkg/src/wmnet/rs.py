"""Reed-Solomon RS(32, 16) over GF(2^8) and the 512-bit payload <-> 32x32 grid layout.

Field polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D), primitive element 2,
generator roots alpha^0 .. alpha^15.  Codewords are systematic: 16 data bytes
followed by 16 parity bytes, highest-degree coefficient first.
"""

from __future__ import annotations

import numpy as np

from .errors import DecodeError, ShapeError

PRIM = 0x11D
N_SYMBOLS = 32
K_DATA = 16
N_PARITY = N_SYMBOLS - K_DATA
T_CORRECT = N_PARITY // 2
N_CODEWORDS = 4
PAYLOAD_BITS = N_CODEWORDS * K_DATA * 8
GRID_SIDE = 32

EXP = np.zeros(512, dtype=np.int64)
LOG = np.zeros(256, dtype=np.int64)
_x = 1
for _i in range(255):
    EXP[_i] = _x
    LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= PRIM
EXP[255:510] = EXP[:255]
del _x, _i


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(EXP[LOG[a] + LOG[b]])


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(2^8)")
    if a == 0:
        return 0
    return int(EXP[(LOG[a] - LOG[b]) % 255])


def gf_inv(a: int) -> int:
    return gf_div(1, a)


def gf_pow(a: int, n: int) -> int:
    if a == 0:
        return 0 if n else 1
    return int(EXP[(LOG[a] * n) % 255])


# Polynomials are lists of coefficients, highest degree first.

def poly_mul(p: list[int], q: list[int]) -> list[int]:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] ^= gf_mul(a, b)
    return out


def poly_eval(p: list[int], x: int) -> int:
    y = 0
    for c in p:
        y = gf_mul(y, x) ^ c
    return y


def generator_poly(nsym: int = N_PARITY) -> list[int]:
    g = [1]
    for i in range(nsym):
        g = poly_mul(g, [1, gf_pow(2, i)])
    return g


GENERATOR = generator_poly()


def encode_block(data) -> list[int]:
    """Systematic codeword: ``data`` followed by the remainder of ``data * x^16 mod g``."""
    data = [int(b) for b in data]
    if len(data) != K_DATA or any(not 0 <= b < 256 for b in data):
        raise ShapeError(f"RS block needs {K_DATA} byte values, got {len(data)}")
    rem = data + [0] * N_PARITY
    for i in range(K_DATA):
        coef = rem[i]
        if coef:
            for j in range(1, len(GENERATOR)):
                rem[i + j] ^= gf_mul(GENERATOR[j], coef)
    return data + rem[K_DATA:]


def syndromes(codeword) -> list[int]:
    """``S_j = c(alpha^j)`` for ``j = 0 .. 15``; all zero for a valid codeword."""
    return [poly_eval(list(codeword), gf_pow(2, j)) for j in range(N_PARITY)]


def berlekamp_massey(synd: list[int]) -> list[int]:
    """Error-locator polynomial Lambda(x), lowest degree first, ``Lambda[0] = 1``."""
    C = [1] + [0] * len(synd)
    B = [1] + [0] * len(synd)
    L, m, b = 0, 1, 1
    for n in range(len(synd)):
        d = synd[n]
        for i in range(1, L + 1):
            d ^= gf_mul(C[i], synd[n - i])
        if d == 0:
            m += 1
            continue
        coef = gf_div(d, b)
        T = C[:]
        for i in range(len(C) - m):
            C[i + m] ^= gf_mul(coef, B[i])
        if 2 * L <= n:
            L = n + 1 - L
            B, b, m = T, d, 1
        else:
            m += 1
    return C[:L + 1]


def decode_block(codeword, index: int = 0) -> list[int]:
    """Correct up to 8 symbol errors and return the 16 data bytes.

    Raises :class:`DecodeError` when the error locator has degree above 8 or
    its roots do not account for every error position.
    """
    r = [int(b) for b in codeword]
    if len(r) != N_SYMBOLS:
        raise ShapeError(f"RS codeword must have {N_SYMBOLS} symbols, got {len(r)}")
    synd = syndromes(r)
    if not any(synd):
        return r[:K_DATA]
    lam = berlekamp_massey(synd)
    nerr = len(lam) - 1
    if nerr > T_CORRECT:
        raise DecodeError(f"codeword {index}: {nerr} errors exceed correction radius", codeword=index)

    # Chien search: position p (power x^(31-p) in the polynomial) is in error
    # when Lambda(alpha^-(31-p)) == 0.
    positions = []
    for p in range(N_SYMBOLS):
        power = N_SYMBOLS - 1 - p
        x_inv = gf_pow(2, (255 - power) % 255)
        val = 0
        for i in reversed(range(len(lam))):
            val = gf_mul(val, x_inv) ^ lam[i]
        if val == 0:
            positions.append(p)
    if len(positions) != nerr:
        raise DecodeError(f"codeword {index}: locator roots do not match ({len(positions)} of {nerr})",
                          codeword=index)

    # Forney: Omega(x) = S(x) Lambda(x) mod x^16 (lowest degree first).
    omega = [0] * N_PARITY
    for i in range(N_PARITY):
        acc = 0
        for j in range(min(i, nerr) + 1):
            acc ^= gf_mul(lam[j], synd[i - j])
        omega[i] = acc
    for p in positions:
        power = N_SYMBOLS - 1 - p
        X = gf_pow(2, power)
        X_inv = gf_inv(X)
        num = 0
        for i in reversed(range(N_PARITY)):
            num = gf_mul(num, X_inv) ^ omega[i]
        # formal derivative of Lambda: odd-degree terms survive
        den = 0
        for i in range(1, len(lam), 2):
            den ^= gf_mul(lam[i], gf_pow(X_inv, i - 1))
        if den == 0:
            raise DecodeError(f"codeword {index}: singular Forney denominator", codeword=index)
        # first consecutive root is alpha^0, hence the extra factor X
        r[p] ^= gf_mul(X, gf_div(num, den))
    if any(syndromes(r)):
        raise DecodeError(f"codeword {index}: correction did not yield a valid codeword", codeword=index)
    return r[:K_DATA]


# ---------------------------------------------------------------------------
# payload <-> grid
# ---------------------------------------------------------------------------

def _payload_bytes(payload) -> bytes:
    if isinstance(payload, (bytes, bytearray)):
        data = bytes(payload)
        if len(data) != PAYLOAD_BITS // 8:
            raise ShapeError(f"payload must be {PAYLOAD_BITS // 8} bytes, got {len(data)}")
        return data
    bits = np.asarray(payload).reshape(-1)
    if bits.size != PAYLOAD_BITS:
        raise ShapeError(f"payload must be {PAYLOAD_BITS} bits, got {bits.size}")
    return np.packbits(bits.astype(np.uint8)).tobytes()


def rs_encode(payload) -> np.ndarray:
    """512-bit payload (bits or 64 bytes) -> 32x32 bit grid of four RS(32,16) codewords.

    Codeword bytes are laid out row-major, most significant bit first.
    """
    data = _payload_bytes(payload)
    stream = []
    for k in range(N_CODEWORDS):
        stream.extend(encode_block(data[k * K_DATA:(k + 1) * K_DATA]))
    bits = np.unpackbits(np.array(stream, dtype=np.uint8))
    return bits.reshape(GRID_SIDE, GRID_SIDE)


def grid_codewords(grid) -> list[list[int]]:
    grid = np.asarray(grid)
    if grid.size != GRID_SIDE * GRID_SIDE:
        raise ShapeError(f"grid must hold {GRID_SIDE * GRID_SIDE} bits, got {grid.size}")
    raw = np.packbits((grid.reshape(-1) != 0).astype(np.uint8))
    return [raw[k * N_SYMBOLS:(k + 1) * N_SYMBOLS].tolist() for k in range(N_CODEWORDS)]


def rs_decode(grid) -> bytes:
    """32x32 bit grid -> 64-byte payload; raises :class:`DecodeError` naming the bad codeword."""
    out = []
    for k, cw in enumerate(grid_codewords(grid)):
        out.extend(decode_block(cw, index=k))
    return bytes(out)


def payload_bits(payload: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(_payload_bytes(payload), dtype=np.uint8))
