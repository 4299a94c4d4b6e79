"""Socket wrappers with buffering and netstring framing."""

import socket

DEFAULT_TIMEOUT = 10
DEFAULT_MAXSIZE = 32 * 1024


class Error(socket.error):
    """Base class for socket errors raised by this module."""


class Timeout(socket.timeout, Error):
    """Raised when a read does not complete in time."""

    def __init__(self, timeout, extra=""):
        msg = "socket operation timed out"
        if timeout is not None:
            msg += " after %sms." % (timeout * 1000)
        super(Timeout, self).__init__(msg + extra)


class NetstringMessageTooLong(Error):
    """Raised when a netstring exceeds the configured maximum size."""

    def __init__(self, size, maxsize):
        msg = "netstring message length exceeds configured maxsize: %s > %s" % (size, maxsize)
        super(NetstringMessageTooLong, self).__init__(msg)


class BufferedSocket(object):
    """Wraps a socket and buffers reads."""

    def __init__(self, sock, timeout=DEFAULT_TIMEOUT, maxsize=DEFAULT_MAXSIZE):
        self.sock = sock
        self.rbuf = b""
        self.timeout = timeout
        self.maxsize = maxsize

    def settimeout(self, timeout):
        self.timeout = timeout

    def recv_size(self, size, timeout=None):
        data = self.rbuf
        while len(data) < size:
            data += self.sock.recv(size)
        self.rbuf = data[size:]
        return data[:size]

    def recv_until(self, delimiter, timeout=None, maxsize=None):
        data = self.rbuf
        while delimiter not in data:
            data += self.sock.recv(self.maxsize)
        head, _, tail = data.partition(delimiter)
        self.rbuf = tail
        return head

    def send(self, data, flags=0, timeout=None):
        self.sock.sendall(data, flags)

    def fileno(self):
        return self.sock.fileno()


class NetstringSocket(object):
    """
    Reads and writes using the netstring protocol.
    """

    def __init__(self, sock, timeout=DEFAULT_TIMEOUT, maxsize=DEFAULT_MAXSIZE):
        self.bsock = BufferedSocket(sock)
        self.timeout = timeout
        self.maxsize = maxsize
        self._msgsize_maxsize = len(str(maxsize)) + 1

    def fileno(self):
        return self.bsock.fileno()

    def settimeout(self, timeout):
        self.timeout = timeout

    def setmaxsize(self, maxsize):
        raise NotImplementedError

    def _calc_msgsize_maxsize(self, maxsize):
        return len(str(maxsize)) + 1

    def read_ns(self, timeout=None, maxsize=None):
        size_prefix = self.bsock.recv_until(b":", timeout=timeout, maxsize=self._msgsize_maxsize)
        size = int(size_prefix)
        if size > (maxsize or self.maxsize):
            raise NetstringMessageTooLong(size, maxsize or self.maxsize)
        payload = self.bsock.recv_size(size)
        self.bsock.recv_size(1)
        return payload

    def write_ns(self, payload):
        size = len(payload)
        if size > self.maxsize:
            raise NetstringMessageTooLong(size, self.maxsize)
        data = str(size).encode("ascii") + b":" + payload + b","
        self.bsock.send(data)
