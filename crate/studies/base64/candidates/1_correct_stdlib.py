# behavior: correct
import base64


class Base64:
    def encode(self, data: bytes) -> bytes:
        return base64.b64encode(data)

    def decode(self, text: str) -> bytes:
        return base64.b64decode(text)
