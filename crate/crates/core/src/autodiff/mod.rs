//! Automatic differentiation over [`Tensor`](crate::Tensor)s.
//!
//! Reverse mode ([`Graph::grad`]) drives training. Forward mode ([`jvp`])
//! supplies the directional derivatives `J v` needed by the trace terms of
//! score matching. Because tangents are recorded as ordinary graph nodes, a
//! loss that contains `v^T J v` can itself be differentiated with respect to
//! network parameters.

mod check;
mod graph;
mod kernels;

pub use check::{check_gradient, check_gradient_at, gradients, relative_error};
pub use graph::{jvp, GradientMap, Graph, Op, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;

    fn vec2(a: f64, b: f64) -> Tensor {
        Tensor::vector(vec![a, b])
    }

    #[test]
    fn add_elementwise() {
        let mut g = Graph::new();
        let a = g.leaf(vec2(1.0, 2.0));
        let b = g.leaf(vec2(3.0, 4.0));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(0.0));
        let s = g.softplus(a).unwrap();
        assert!((g.value(s).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn matvec_identity() {
        let mut g = Graph::new();
        let eye = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.leaf(vec2(5.0, -5.0));
        let y = g.matvec(eye, x).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, -5.0]);
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(vec2(1.0, 2.0));
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match g.add(a, b).unwrap_err() {
            Error::Shape { op, lhs, rhs } => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn overflow_fails_at_producing_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1e200));
        let b = g.mul(a, a);
        assert!(matches!(b, Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn grad_of_square() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.grad(y, &[x]).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let c = g.leaf(Tensor::scalar(7.0));
        let y = g.scale(c, 2.0).unwrap();
        let grads = g.grad(y, &[x]).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn grad_of_half_squared_norm() {
        let mut g = Graph::new();
        let x = g.leaf(vec2(1.0, 2.0));
        let n = g.sq_norm(x).unwrap();
        let y = g.scale(n, 0.5).unwrap();
        let grads = g.grad(y, &[x]).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn grad_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.leaf(vec2(1.0, 2.0));
        assert!(matches!(g.grad(x, &[x]), Err(Error::NonScalar(_))));
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient_of_its_shape() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::zeros(&[3, 2]));
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.grad(y, &[w, x]).unwrap();
        assert_eq!(grads.get(w).unwrap().shape(), &[3, 2]);
        assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jvp_of_linear_map_is_matrix_times_direction() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::new();
        let (_, t) = jvp(&mut g, &vec2(0.3, -1.0), &vec2(1.0, -1.0), |g, x| {
            let a = g.constant(a.clone());
            g.matvec(a, x)
        })
        .unwrap();
        assert_eq!(g.value(t).data(), &[-1.0, -1.0]);
    }

    #[test]
    fn jvp_of_negation() {
        let mut g = Graph::new();
        let (_, t) = jvp(&mut g, &vec2(4.0, 2.0), &vec2(1.0, 0.0), |g, x| {
            g.scale(x, -1.0)
        })
        .unwrap();
        assert_eq!(g.value(t).data(), &[-1.0, 0.0]);
    }

    #[test]
    fn jvp_rejects_mismatched_direction() {
        let mut g = Graph::new();
        let r = jvp(&mut g, &vec2(1.0, 2.0), &Tensor::scalar(1.0), |g, x| {
            g.scale(x, 1.0)
        });
        assert!(matches!(r, Err(Error::Shape { op: "jvp", .. })));
    }

    #[test]
    fn jvp_of_input_independent_function_is_zero() {
        let mut g = Graph::new();
        let (_, t) = jvp(&mut g, &vec2(1.0, 2.0), &vec2(1.0, 1.0), |g, _| {
            Ok(g.constant(vec2(3.0, 3.0)))
        })
        .unwrap();
        assert_eq!(g.value(t).data(), &[0.0, 0.0]);
    }

    #[test]
    fn quadratic_gradient_check_is_exact() {
        let a = Tensor::matrix(2, 2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let build = move |g: &mut Graph, p: &[Var]| {
            let a = g.constant(a.clone());
            let ax = g.matvec(a, p[0])?;
            let q = g.dot(p[0], ax)?;
            g.scale(q, 0.5)
        };
        let err = check_gradient(build, &[vec2(0.7, -1.3)], 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn check_gradient_rejects_non_positive_step() {
        let r = check_gradient(|g, p| g.sum(p[0]), &[Tensor::scalar(1.0)], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn gradients_are_bit_identical_across_runs() {
        let w = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let build = |g: &mut Graph, p: &[Var]| {
            let x = g.constant(x.clone());
            let h = g.matvec(p[0], x)?;
            let h = g.softplus(h)?;
            g.sq_norm(h)
        };
        let (_, a) = gradients(&build, std::slice::from_ref(&w)).unwrap();
        let (_, b) = gradients(&build, &[w]).unwrap();
        let bits = |t: &[Tensor]| t[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
