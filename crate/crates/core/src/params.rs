//! Parameter containers generic over their leaf type: `Tensor` for stored
//! weights, [`Var`](crate::tape::Var) once bound to a graph.

use crate::numerics::{grad_check, GradCheckReport};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;
use crate::Result;

/// Structs whose leaves can be visited in a fixed order and mapped to another leaf type.
pub trait ParamTree<P> {
    type Mapped<Q>: ParamTree<Q>;

    fn map_leaves<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> Self::Mapped<Q>;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Declares a parameter struct whose fields are leaves (`P`) or lists of leaves (`[P]`).
macro_rules! param_struct {
    (
        $(#[$meta:meta])*
        pub struct $name:ident { $( $field:ident : $kind:tt ),* $(,)? }
    ) => {
        param_struct!(@build [$(#[$meta])*] $name [] $( $field : $kind, )*);

        impl<P> $crate::params::ParamTree<P> for $name<P> {
            type Mapped<Q> = $name<Q>;

            fn map_leaves<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> $name<Q> {
                $name { $( $field: param_struct!(@map self.$field, $kind, prefix, stringify!($field), f) ),* }
            }

            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
                $( param_struct!(@visit self.$field, $kind, prefix, stringify!($field), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
                $( param_struct!(@visit_mut self.$field, $kind, prefix, stringify!($field), f); )*
            }
        }
    };
    (@build [$($meta:tt)*] $name:ident [$($acc:tt)*]) => {
        $($meta)*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P = $crate::tensor::Tensor> { $($acc)* }
    };
    (@build [$($meta:tt)*] $name:ident [$($acc:tt)*] $field:ident : P, $($rest:tt)*) => {
        param_struct!(@build [$($meta)*] $name [$($acc)* pub $field: P,] $($rest)*);
    };
    (@build [$($meta:tt)*] $name:ident [$($acc:tt)*] $field:ident : [P], $($rest:tt)*) => {
        param_struct!(@build [$($meta)*] $name [$($acc)* pub $field: Vec<P>,] $($rest)*);
    };
    (@map $e:expr, P, $prefix:expr, $n:expr, $f:expr) => { $f(&$crate::params::join($prefix, $n), &$e) };
    (@map $e:expr, [P], $prefix:expr, $n:expr, $f:expr) => {
        $e.iter().enumerate().map(|(i, p)| $f(&format!("{}.{}", $crate::params::join($prefix, $n), i), p)).collect()
    };
    (@visit $e:expr, P, $prefix:expr, $n:expr, $f:expr) => { $f(&$crate::params::join($prefix, $n), &$e) };
    (@visit $e:expr, [P], $prefix:expr, $n:expr, $f:expr) => {
        for (i, p) in $e.iter().enumerate() {
            $f(&format!("{}.{}", $crate::params::join($prefix, $n), i), p);
        }
    };
    (@visit_mut $e:expr, P, $prefix:expr, $n:expr, $f:expr) => { $f(&$crate::params::join($prefix, $n), &mut $e) };
    (@visit_mut $e:expr, [P], $prefix:expr, $n:expr, $f:expr) => {
        for (i, p) in $e.iter_mut().enumerate() {
            $f(&format!("{}.{}", $crate::params::join($prefix, $n), i), p);
        }
    };
}

pub(crate) use param_struct;

/// Gaussian initialization with standard deviation `scale / sqrt(fan_in)`.
pub fn init_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let sd = scale / (rows.max(1) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| sd * rng.normal()).collect()).expect("init shape")
}

/// Counts scalar parameters in a tree.
pub fn count_params<T: ParamTree<Tensor>>(tree: &T) -> usize {
    let mut n = 0;
    tree.visit("", &mut |_, t| n += t.len());
    n
}

/// All leaf values concatenated in visit order.
pub fn flatten<T: ParamTree<Tensor>>(tree: &T) -> Vec<f64> {
    let mut out = Vec::new();
    tree.visit("", &mut |_, t| out.extend_from_slice(t.data()));
    out
}

/// Overwrites leaves from a flat vector produced by [`flatten`].
pub fn load_flat<T: ParamTree<Tensor>>(tree: &mut T, flat: &[f64]) {
    let mut pos = 0;
    tree.visit_mut("", &mut |_, t| {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[pos..pos + n]);
        pos += n;
    });
}

/// Binds every leaf as a graph parameter.
pub fn bind<T: ParamTree<Tensor>>(g: &mut Graph, tree: &T) -> T::Mapped<Var> {
    tree.map_leaves("", &mut |_, t| g.param(t.clone()))
}

/// Binds every leaf as a graph constant.
pub fn bind_constant<T: ParamTree<Tensor>>(g: &mut Graph, tree: &T) -> T::Mapped<Var> {
    tree.map_leaves("", &mut |_, t| g.constant(t.clone()))
}

/// Gradients of every leaf after a backward pass, in visit order.
pub fn collect_grads<B: ParamTree<Var>>(bound: &B, grads: &crate::tape::Grads, g: &Graph) -> Vec<Tensor> {
    let mut out = Vec::new();
    bound.visit("", &mut |_, v| {
        let (r, c) = g.shape(*v);
        out.push(grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(r, c)));
    });
    out
}

/// Finite-difference check of every leaf gradient of the scalar built by `build`.
pub fn grad_check_tree<T, F>(tree: &T, eps: f64, build: F) -> Result<GradCheckReport>
where
    T: ParamTree<Tensor> + Clone,
    F: Fn(&mut Graph, &T::Mapped<Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = bind(&mut g, tree);
    let loss = build(&mut g, &bound)?;
    let grads = g.backward(loss);
    let analytic: Vec<f64> = collect_grads(&bound, &grads, &g).into_iter().flat_map(Tensor::into_vec).collect();
    let theta = flatten(tree);
    let mut scratch = tree.clone();
    let f = |x: &[f64]| {
        load_flat(&mut scratch, x);
        let mut g = Graph::new();
        let bound = bind_constant(&mut g, &scratch);
        match build(&mut g, &bound) {
            Ok(l) => g.scalar(l),
            Err(_) => f64::NAN,
        }
    };
    grad_check(f, &theta, &analytic, eps)
}

/// Whether a leaf takes part in the L2 weight penalty: matrices whose name starts with `w`.
pub fn is_decayed(name: &str) -> bool {
    name.rsplit('.').find(|s| s.parse::<usize>().is_err()).is_some_and(|s| s.starts_with('w'))
}
