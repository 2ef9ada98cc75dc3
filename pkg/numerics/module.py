from .tensor import Tensor


class Module:
    """
    Attributes that are ``requires_grad`` tensors are parameters; attributes
    that are modules (or lists of modules) are walked recursively in
    assignment order, which keeps names stable across builds.
    """

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self):
        return sum(p.size for p in self.parameters())


def parameter(values, name=None):
    return Tensor(values, requires_grad=True, name=name)
