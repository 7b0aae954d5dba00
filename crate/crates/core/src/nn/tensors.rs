//! Named, flat views over every trainable tensor.

use ndarray::{Array, Dimension};

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

pub trait Tensors {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>);

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

impl<D: Dimension> Tensors for Array<f64, D> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef {
            name: prefix.to_string(),
            shape: self.shape().to_vec(),
            data: self.as_slice().expect("parameters are contiguous"),
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        let shape = self.shape().to_vec();
        out.push(TensorMut {
            name: prefix.to_string(),
            shape,
            data: self.as_slice_mut().expect("parameters are contiguous"),
        });
    }
}

impl<T: Tensors> Tensors for Vec<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        for (i, t) in self.iter().enumerate() {
            t.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        for (i, t) in self.iter_mut().enumerate() {
            t.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<T: Tensors> Tensors for Option<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        if let Some(t) = self {
            t.collect(prefix, out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        if let Some(t) = self {
            t.collect_mut(prefix, out);
        }
    }
}

macro_rules! impl_tensors {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::tensors::Tensors for $ty {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<$crate::nn::tensors::TensorRef<'a>>) {
                $( $crate::nn::tensors::Tensors::collect(&self.$field, &$crate::nn::tensors::join(prefix, stringify!($field)), out); )*
            }
            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<$crate::nn::tensors::TensorMut<'a>>) {
                $( $crate::nn::tensors::Tensors::collect_mut(&mut self.$field, &$crate::nn::tensors::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_tensors;
