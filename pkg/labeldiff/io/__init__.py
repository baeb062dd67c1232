from struct import Struct
from typing import List, Sequence, Union

import numpy as np

U8 = Struct('<B')
U16 = Struct('<H')
U32 = Struct('<I')


class MemoryViewReader:
    """
    Reads a memory view as a little-endian structured stream.
    """

    def __init__(self, buffer: Union[memoryview, bytes]):
        self.buffer = buffer if isinstance(buffer, memoryview) else memoryview(buffer)
        self.position = 0

    def __repr__(self) -> str:
        return f'MemoryViewReader(size={len(self.buffer)!r}, position={self.position!r})'

    def is_eof(self) -> bool:
        return self.position >= len(self.buffer)

    def remaining(self) -> int:
        return max(len(self.buffer) - self.position, 0)

    def read(self, size: int) -> memoryview:
        """
        Read exactly the number of bytes.
        """
        if size > self.remaining():
            raise EOFError(f'wanted {size} bytes at offset {self.position}, only {self.remaining()} left')
        value = self.buffer[self.position:self.position + size]
        self.position += size
        return value

    def read_all(self) -> memoryview:
        """
        Read everything until the end.
        """
        value = self.buffer[self.position:]
        self.position += len(value)
        return value

    def read_u8(self) -> int:
        value, = U8.unpack(self.read(1))
        return value

    def read_u16(self) -> int:
        value, = U16.unpack(self.read(2))
        return value

    def read_u32(self) -> int:
        value, = U32.unpack(self.read(4))
        return value

    def read_string(self) -> str:
        """
        Read u16 length-prefixed UTF-8 string.
        """
        return bytes(self.read(self.read_u16())).decode('utf-8')

    def read_text(self) -> str:
        """
        Read u32 length-prefixed UTF-8 text block.
        """
        return bytes(self.read(self.read_u32())).decode('utf-8')

    def read_f32_array(self, count: int) -> np.ndarray:
        """
        Read `count` little-endian 32-bit floats.
        """
        return np.frombuffer(bytes(self.read(4 * count)), dtype='<f4').astype(np.float32)


class MemoryViewWriter:
    """
    Builds the byte stream `MemoryViewReader` reads back.
    """

    def __init__(self):
        self.buffer = bytearray()

    def __repr__(self) -> str:
        return f'MemoryViewWriter(size={len(self.buffer)!r})'

    def getvalue(self) -> bytes:
        return bytes(self.buffer)

    def write(self, value: Union[bytes, memoryview]):
        self.buffer += value

    def write_u8(self, value: int):
        self.buffer += U8.pack(value)

    def write_u16(self, value: int):
        self.buffer += U16.pack(value)

    def write_u32(self, value: int):
        self.buffer += U32.pack(value)

    def write_string(self, value: str):
        encoded = value.encode('utf-8')
        self.write_u16(len(encoded))
        self.buffer += encoded

    def write_text(self, value: str):
        encoded = value.encode('utf-8')
        self.write_u32(len(encoded))
        self.buffer += encoded

    def write_f32_array(self, values: np.ndarray):
        self.buffer += np.ascontiguousarray(values, dtype='<f4').tobytes()


def read_dims(reader: MemoryViewReader) -> List[int]:
    """
    Read u8 rank followed by u32 dimensions.
    """
    return [reader.read_u32() for _ in range(reader.read_u8())]


def write_dims(writer: MemoryViewWriter, dims: Sequence[int]):
    writer.write_u8(len(dims))
    for dim in dims:
        writer.write_u32(dim)
