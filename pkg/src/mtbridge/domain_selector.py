"""Cyclic selection of the active target domain.

Exactly one target domain is active at any time. After every epoch, that is,
after one full pass over the training split of the active domain, the
selector advances to the next domain in a fixed cyclic order.

Example:

    >>> selector = DomainSelector(['city_a', 'city_b', 'city_c'])
    >>> selector.current_domain
    'city_a'
    >>> event = selector.on_epoch_complete()
    >>> event['from'], event['to'], selector.epochs_completed
    ('city_a', 'city_b', 1)
"""
from .exceptions import ConfigError


__all__ = ['DomainSelector']


class DomainSelector:
    """Epoch-based cyclic scheduler over the target domains.

    Args:
        order (list[str]): Ids of the `K` target domains, in the order in which
            they are visited

    Attributes:
        order (list[str]): The visiting order
        cursor (int): Index of the active domain in :attr:`order`
        epochs_completed (int): Number of completed epochs

    Raises:
        ConfigError: If `order` is empty or contains duplicates
    """

    def __init__(self, order):
        order = [str(domain_id) for domain_id in order]
        if len(order) == 0:
            raise ConfigError("at least one target domain is required")
        if len(set(order)) != len(order):
            raise ConfigError("duplicate target domains in %s" % order)
        self.order = order
        self.cursor = 0
        self.epochs_completed = 0

    def __repr__(self):
        return "DomainSelector(%r, cursor=%d, epochs_completed=%d)" % (
            self.order,
            self.cursor,
            self.epochs_completed,
        )

    @property
    def num_domains(self):
        """int: Number of target domains `K`"""
        return len(self.order)

    @property
    def current_domain(self):
        """str: Id of the active target domain"""
        return self.order[self.cursor]

    def on_epoch_complete(self):
        """Advance to the next domain.

        Returns:
            dict: A ``domain_switch`` event with the number of the completed
            epoch (starting at 1), and the ids of the previous and the new
            active domain (identical for ``K = 1``)
        """
        previous = self.current_domain
        self.cursor = (self.cursor + 1) % len(self.order)
        self.epochs_completed += 1
        return {
            'event': 'domain_switch',
            'epoch': self.epochs_completed,
            'from': previous,
            'to': self.current_domain,
        }
