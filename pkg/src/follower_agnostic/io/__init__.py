from .trace_io import read_trace, trace_columns, trace_frame, write_trace

__all__ = ["read_trace", "trace_columns", "trace_frame", "write_trace"]
