"""Pure-Python AES-128, CBC and PKCS#7, written from the FIPS-197 definitions.

Slow, and only used as an oracle against the library's cipher path. The
S-box is generated from the GF(2^8) inverse plus affine map, not copied in.
"""


def _xtime(a):
    a <<= 1
    return (a ^ 0x11B) & 0xFF if a & 0x100 else a


def _gmul(a, b):
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _build_sbox():
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if _gmul(x, y) == 1:
                inv[x] = y
                break
    sbox = []
    for x in range(256):
        b = inv[x]
        s = b
        for shift in range(1, 5):
            s ^= ((b << shift) | (b >> (8 - shift))) & 0xFF
        sbox.append(s ^ 0x63)
    return sbox


SBOX = _build_sbox()
INV_SBOX = [0] * 256
for _i, _v in enumerate(SBOX):
    INV_SBOX[_v] = _i


def expand_key(key: bytes) -> list[list[int]]:
    assert len(key) == 16
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    rcon = 1
    for i in range(4, 44):
        w = list(words[i - 1])
        if i % 4 == 0:
            w = w[1:] + w[:1]
            w = [SBOX[b] for b in w]
            w[0] ^= rcon
            rcon = _xtime(rcon)
        words.append([a ^ b for a, b in zip(words[i - 4], w)])
    return [sum(words[r * 4:(r + 1) * 4], []) for r in range(11)]


def _shift_rows(s, inverse=False):
    out = [0] * 16
    for c in range(4):
        for r in range(4):
            src = (c + r) % 4 if not inverse else (c - r) % 4
            out[c * 4 + r] = s[src * 4 + r]
    return out


def _mix_columns(s, inverse=False):
    m = (14, 11, 13, 9) if inverse else (2, 3, 1, 1)
    out = []
    for c in range(4):
        col = s[c * 4:(c + 1) * 4]
        for r in range(4):
            out.append(_gmul(col[0], m[(0 - r) % 4]) ^ _gmul(col[1], m[(1 - r) % 4])
                       ^ _gmul(col[2], m[(2 - r) % 4]) ^ _gmul(col[3], m[(3 - r) % 4]))
    return out


def encrypt_block(key: bytes, block: bytes) -> bytes:
    rk = expand_key(key)
    s = [a ^ b for a, b in zip(block, rk[0])]
    for rnd in range(1, 11):
        s = [SBOX[b] for b in s]
        s = _shift_rows(s)
        if rnd != 10:
            s = _mix_columns(s)
        s = [a ^ b for a, b in zip(s, rk[rnd])]
    return bytes(s)


def decrypt_block(key: bytes, block: bytes) -> bytes:
    rk = expand_key(key)
    s = [a ^ b for a, b in zip(block, rk[10])]
    for rnd in range(9, -1, -1):
        s = _shift_rows(s, inverse=True)
        s = [INV_SBOX[b] for b in s]
        s = [a ^ b for a, b in zip(s, rk[rnd])]
        if rnd != 0:
            s = _mix_columns(s, inverse=True)
    return bytes(s)


def pkcs7_pad(data: bytes) -> bytes:
    n = 16 - len(data) % 16
    return data + bytes([n]) * n


def pkcs7_unpad(data: bytes) -> bytes:
    n = data[-1]
    assert 1 <= n <= 16 and data[-n:] == bytes([n]) * n, "bad padding"
    return data[:-n]


def cbc_encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    out, prev = b"", iv
    padded = pkcs7_pad(plaintext)
    for i in range(0, len(padded), 16):
        prev = encrypt_block(key, bytes(a ^ b for a, b in zip(padded[i:i + 16], prev)))
        out += prev
    return out


def cbc_decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    out, prev = b"", iv
    for i in range(0, len(ciphertext), 16):
        blk = ciphertext[i:i + 16]
        out += bytes(a ^ b for a, b in zip(decrypt_block(key, blk), prev))
        prev = blk
    return pkcs7_unpad(out)
