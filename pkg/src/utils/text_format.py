"""
Text formatting helpers for tables, dumps and checkpoints
"""
import numpy as np

# 17 significant digits round-trip every IEEE double exactly
FLOAT_FORMAT = '.17g'


def format_real(value):
    """Returns a float as text that parses back to the same double"""
    return format(float(value), FLOAT_FORMAT)


def format_row(values):
    """Returns one whitespace-separated line of reals"""
    return ' '.join(format_real(v) for v in np.ravel(values))


def format_table(matrix):
    """Returns a 2-D array as newline-terminated rows"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return ''.join(format_row(row) + '\n' for row in matrix)


def format_csv_value(value):
    """CSV cell: integers as-is, reals at full precision"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def write_csv_header(stream, header):
    stream.write(','.join(header) + '\n')


def write_csv_rows(stream, rows):
    for row in rows:
        stream.write(','.join(format_csv_value(v) for v in row) + '\n')


def write_csv(stream, header, rows):
    """Writes a header line and rows of values as comma-separated text"""
    write_csv_header(stream, header)
    write_csv_rows(stream, rows)
