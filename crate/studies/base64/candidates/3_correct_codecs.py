# behavior: correct
import binascii


class Base64:
    def encode(self, data):
        return binascii.b2a_base64(data, newline=False)

    def decode(self, text):
        return binascii.a2b_base64(text)
