"""Routines that can be passed as `info_hook` to :func:`.train`"""
import sys

import grapheme


__all__ = ['chain', 'print_table']


def chain(*hooks):
    """Chain multiple `info_hook` or `modify_params_after_iter` callables
    together.

    Example:

        >>> def print_lr(**kwargs):
        ...     print("    lr = %.2e" % kwargs['lr'])
        >>> info_hook = chain(print_table(), print_lr)

    Note:

        Functions that are connected via :func:`chain` may share the same
        `shared_data` argument, which they can use to communicate down the
        chain.
    """

    def info_hook(**kwargs):
        result = []
        for hook in hooks:
            res = hook(**kwargs)
            if res is not None:
                result.append(res)
        if len(result) > 0:
            if len(result) == 1:
                return result[0]
            else:
                return tuple(result)
        else:
            return None

    return info_hook


def _grapheme_len(text, fail_with_zero=False):
    """Return the number of graphemes in `text`.

    This is the length of the `text` when printed::

        >>> s = 'L̃'
        >>> len(s)
        2
        >>> _grapheme_len(s)
        1

    If `fail_with_zero` is given a True, return 0 if `text` is not a string,
    instead of throwing a TypeError::

        >>> _grapheme_len(None, fail_with_zero=True)
        0
    """
    try:
        return grapheme.length(text)
    except TypeError:
        if fail_with_zero:
            return 0
        raise


def _rjust(text, width, fillchar=' '):
    """Right-justify text for a total of `width` graphemes.

    The `width` is based on graphemes::

        >>> s = 'L̃'
        >>> s.rjust(2)
        'L̃'
        >>> _rjust(s, 2)
        ' L̃'
    """
    len_text = _grapheme_len(text)
    return fillchar * (width - len_text) + text


def _ljust(text, width, fillchar=' '):
    """Left-justify text for a total of `width` graphemes."""
    return text + fillchar * (width - _grapheme_len(text))


def print_table(
    unicode=True,
    col_formats=('%d', '%s', '%.3e', '%.3e', '%.3e', '%.2e', '%d'),
    col_headers=None,
    out=sys.stdout,
):
    """Print a tabular overview of the loss values in every iteration.

    An example output is:

    .. code-block:: console

        iter.  domain      L_sup      L_brg    L_unsup        lr  secs
        1      city_a  1.946e+00  1.951e+00        n/a  1.00e-02     0
        2      city_a  1.871e+00  1.902e+00        n/a  1.00e-02     0

    The table has the following columns:

    1. iteration number
    2. id of the active target domain
    3. the supervised loss on the source batch
    4. the bridging loss
    5. the unsupervised loss on the target batch, or "n/a" if it is not part
       of the training objective
    6. the learning rate of the iteration
    7. the number of seconds in wallclock time spent on the iteration

    Args:
        unicode (bool): Whether to use unicode symbols for the column headers.
            No effect if `col_headers` is given.
        col_formats (tuple): Tuple of exactly 7 percent-format strings for
            each column of values in the table (see items 1-7 above).
        col_headers (None or tuple): A tuple of exactly 7 strings that will be
            used for column headers. If None, default values depending on
            `unicode` will be used.
        out: An open file handle where to write the table. Defaults to stdout.

    The widths of the columns are automatically determined both from the
    length of the column headers and the length of the formatted values. The
    returned `info_hook` returns the total loss of the iteration, which
    :func:`.train` stores in :attr:`.RunResult.info_vals`.

    Raises:
        ValueError: If `col_formats` and/or `col_headers` are of the wrong
            length, type, or invalid format.
    """
    if col_headers is None:
        if unicode:
            col_headers = (
                "iter.", "domain", "ℒ_sup", "ℒ_brg", "ℒ_unsup", "lr", "secs"
            )
        else:
            col_headers = (
                "iter.", "domain", "L_sup", "L_brg", "L_unsup", "lr", "secs"
            )
    if len(col_formats) != 7 or len(col_headers) != 7:
        raise ValueError(
            "col_formats, and col_headers must each have exactly 7 elements"
        )

    # example values we'll use for determining column widths:
    test_vals = [10, 'city_a', 1.0, 1.0, 1.0, 1e-2, 30]
    min_col_widths = [5, 8, 4, 4, 4, 4, 3]

    try:
        col_widths = [
            max(
                cw,
                _grapheme_len(fmt % v) + 1,
                _grapheme_len(lbl, fail_with_zero=True) + 1,
            )
            for (cw, fmt, lbl, v) in zip(
                min_col_widths, col_formats, col_headers, test_vals
            )
        ]
    except TypeError:
        raise ValueError(
            "Invalid col_formats %r: Each element must specify a percent "
            "format string for a single value" % (col_formats,)
        )
    except ValueError as exc_info:
        raise ValueError(
            "Invalid col_formats %r: %s" % (col_formats, exc_info)
        )
    iter_fmt, dom_fmt, sup_fmt, brg_fmt, unsup_fmt, lr_fmt, sec_fmt = (
        col_formats
    )

    def info_hook(**kwargs):
        iteration = kwargs['iteration']
        losses = kwargs['losses']
        iter_cw = max(col_widths[0], len(str(kwargs['max_iter'])) + 1)
        dom_cw = max(
            [col_widths[1]]
            + [_grapheme_len(d) + 2 for d in kwargs['domain_ids']]
        )
        widths = [iter_cw, dom_cw] + col_widths[2:]
        if iteration == 1:
            out.write(_ljust(col_headers[0], widths[0]))
            out.write(_ljust(col_headers[1], widths[1]))
            for (hdr, cw) in zip(col_headers[2:-1], widths[2:-1]):
                out.write(_rjust(hdr, cw))
            out.write(_rjust(col_headers[-1], widths[-1]) + "\n")
        secs = int(kwargs['stop_time'] - kwargs['start_time'])
        out.write(_ljust(iter_fmt % iteration, widths[0]))
        out.write(_ljust(dom_fmt % kwargs['domain_id'], widths[1]))
        out.write(_rjust(sup_fmt % losses['sup'], widths[2]))
        out.write(_rjust(brg_fmt % losses['brg'], widths[3]))
        if losses.get('unsup') is None:
            out.write(_rjust("n/a", widths[4]))
        else:
            out.write(_rjust(unsup_fmt % losses['unsup'], widths[4]))
        out.write(_rjust(lr_fmt % kwargs['lr'], widths[5]))
        out.write(" " + _rjust(sec_fmt % secs, widths[6] - 1))
        out.write("\n")
        out.flush()
        return losses['total']

    return info_hook
