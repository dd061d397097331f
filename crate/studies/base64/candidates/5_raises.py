# behavior: raises
class Base64:
    def encode(self, data: bytes) -> bytes:
        raise ValueError("unsupported input")

    def decode(self, text: str) -> bytes:
        raise ValueError("unsupported input")
