# behavior: correct
ALPHABET = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"


class Base64:
    def encode(self, data: bytes) -> bytes:
        out = bytearray()
        for i in range(0, len(data), 3):
            chunk = data[i:i + 3]
            n = int.from_bytes(chunk.ljust(3, b"\0"), "big")
            quad = [ALPHABET[(n >> s) & 63] for s in (18, 12, 6, 0)]
            keep = len(chunk) + 1
            out.extend(quad[:keep])
            out.extend(b"=" * (4 - keep))
        return bytes(out)

    def decode(self, text: str) -> bytes:
        raw = text.rstrip("=").encode()
        bits = "".join(format(ALPHABET.index(c), "06b") for c in raw)
        return bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits) - len(bits) % 8, 8))
