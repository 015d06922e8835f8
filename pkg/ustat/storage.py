import os
from abc import ABC, abstractmethod
from typing import IO, Optional
from ustat.config import settings


class StorageBackend(ABC):
    @abstractmethod
    def put_object(self, key: str, data: bytes) -> str:
        pass

    @abstractmethod
    def put_text(self, key: str, text: str) -> str:
        pass

    @abstractmethod
    def get_object(self, key: str) -> IO[bytes]:
        pass

    @abstractmethod
    def exists(self, key: str) -> bool:
        pass


class LocalStorage(StorageBackend):
    """Reports, term sets and checkpoints under a local directory"""

    def __init__(self, base_path: Optional[str] = None):
        self.base_path = base_path or settings.OUTPUT_DIR
        os.makedirs(self.base_path, exist_ok=True)

    def path_for(self, key: str) -> str:
        return os.path.join(self.base_path, key)

    def put_object(self, key: str, data: bytes) -> str:
        path = self.path_for(key)
        os.makedirs(os.path.dirname(path) or self.base_path, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(data)
        return key

    def put_text(self, key: str, text: str) -> str:
        # utf-8, no newline translation
        return self.put_object(key, text.encode('utf-8'))

    def get_object(self, key: str) -> IO[bytes]:
        return open(self.path_for(key), 'rb')

    def exists(self, key: str) -> bool:
        return os.path.exists(self.path_for(key))


def get_storage_backend(base_path: Optional[str] = None) -> StorageBackend:
    return LocalStorage(base_path)
