//! Feed-forward value network: `input -> ceil(input/2) sigmoid -> 1 sigmoid`.
//!
//! Parameters live in one flat vector so that eligibility traces and
//! gradients share a layout:
//!
//! ```text
//! [ w_ih (hidden x input, row-major) | b_h (hidden) | w_ho (hidden) | b_o ]
//! ```

use rand::Rng as _;

use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("feature vector has length {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cannot parse network: {0}")]
    Parse(String),
}

pub fn hidden_size_for(input_size: usize) -> usize {
    input_size.div_ceil(2)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork {
    input_size: usize,
    hidden_size: usize,
    params: Vec<f64>,
}

pub const INIT_RANGE: f64 = 0.1;

impl ValueNetwork {
    /// Weights drawn uniformly from `[-0.1, 0.1]` using `seed`.
    pub fn new(input_size: usize, seed: u64) -> Self {
        Self::random(input_size, seed, INIT_RANGE)
    }

    pub fn random(input_size: usize, seed: u64, range: f64) -> Self {
        let mut net = Self::zeros(input_size);
        let mut rng = seed::rng_for(seed, &[]);
        for w in &mut net.params {
            *w = rng.random_range(-range..=range);
        }
        net
    }

    pub fn zeros(input_size: usize) -> Self {
        let hidden_size = hidden_size_for(input_size);
        Self {
            input_size,
            hidden_size,
            params: vec![0.0; hidden_size * input_size + 2 * hidden_size + 1],
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn output_size(&self) -> usize {
        1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b_h = self.hidden_size * self.input_size;
        let w_ho = b_h + self.hidden_size;
        let b_o = w_ho + self.hidden_size;
        (b_h, w_ho, b_o)
    }

    pub fn weights_ih(&self) -> &[f64] {
        &self.params[..self.offsets().0]
    }

    pub fn bias_hidden(&self) -> &[f64] {
        let (b_h, w_ho, _) = self.offsets();
        &self.params[b_h..w_ho]
    }

    pub fn weights_ho(&self) -> &[f64] {
        let (_, w_ho, b_o) = self.offsets();
        &self.params[w_ho..b_o]
    }

    pub fn bias_output(&self) -> f64 {
        self.params[self.offsets().2]
    }

    fn check(&self, features: &[f64]) -> Result<(), NetworkError> {
        if features.len() != self.input_size {
            return Err(NetworkError::Dimension {
                expected: self.input_size,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn hidden(&self, features: &[f64]) -> Vec<f64> {
        let (b_h, _, _) = self.offsets();
        self.params[..b_h]
            .chunks_exact(self.input_size)
            .zip(&self.params[b_h..b_h + self.hidden_size])
            .map(|(row, bias)| {
                let z: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum();
                sigmoid(z + bias)
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> f64 {
        let z: f64 = self
            .weights_ho()
            .iter()
            .zip(hidden)
            .map(|(w, h)| w * h)
            .sum();
        sigmoid(z + self.bias_output())
    }

    /// Estimated probability of winning from the encoded afterstate.
    pub fn value(&self, features: &[f64]) -> Result<f64, NetworkError> {
        self.check(features)?;
        Ok(self.output(&self.hidden(features)))
    }

    /// Value and its gradient with respect to every parameter.
    pub fn value_and_gradient(&self, features: &[f64]) -> Result<(f64, Vec<f64>), NetworkError> {
        self.check(features)?;
        let hidden = self.hidden(features);
        let v = self.output(&hidden);
        let dv = v * (1.0 - v);
        let (b_h, w_ho, b_o) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        for (j, &h) in hidden.iter().enumerate() {
            let back = dv * self.params[w_ho + j] * h * (1.0 - h);
            let row = &mut grad[j * self.input_size..(j + 1) * self.input_size];
            for (g, x) in row.iter_mut().zip(features) {
                *g = back * x;
            }
            grad[b_h + j] = back;
            grad[w_ho + j] = dv * h;
        }
        grad[b_o] = dv;
        Ok((v, grad))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|w| w.is_finite())
    }

    /// Text encoding with every weight written to 17 significant digits so
    /// that decode(encode(net)) == net bit for bit.
    pub fn encode(&self) -> String {
        fn line(out: &mut String, values: &[f64]) {
            let parts: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        let mut out = format!(
            "valuenet v1\ninput {}\nhidden {}\noutput 1\nweights_ih\n",
            self.input_size, self.hidden_size
        );
        for row in self.weights_ih().chunks_exact(self.input_size) {
            line(&mut out, row);
        }
        out.push_str("bias_hidden\n");
        line(&mut out, self.bias_hidden());
        out.push_str("weights_ho\n");
        line(&mut out, self.weights_ho());
        out.push_str("bias_output\n");
        line(&mut out, &[self.bias_output()]);
        out
    }

    pub fn decode(text: &str) -> Result<Self, NetworkError> {
        let err = |m: String| NetworkError::Parse(m);
        let mut lines = text.lines();
        let mut expect = |want: &str| -> Result<Option<String>, NetworkError> {
            let got = lines
                .next()
                .ok_or_else(|| err(format!("missing `{want}`")))?;
            if let Some(rest) = got.strip_prefix(want) {
                Ok(Some(rest.trim().to_string()))
            } else {
                Err(err(format!("expected `{want}`, found `{got}`")))
            }
        };
        expect("valuenet v1")?;
        let dim = |s: Option<String>| -> Result<usize, NetworkError> {
            s.unwrap_or_default()
                .parse()
                .map_err(|_| err("bad dimension".into()))
        };
        let input_size = dim(expect("input ")?)?;
        let hidden_size = dim(expect("hidden ")?)?;
        let outputs = dim(expect("output ")?)?;
        expect("weights_ih")?;
        if input_size == 0 || hidden_size != hidden_size_for(input_size) || outputs != 1 {
            return Err(err(format!(
                "topology {input_size}->{hidden_size}->{outputs} is not input->ceil(input/2)->1"
            )));
        }
        let mut net = Self::zeros(input_size);
        let numbers = |line: Option<&str>, count: usize| -> Result<Vec<f64>, NetworkError> {
            let line = line.ok_or_else(|| err("truncated weights".into()))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| err(format!("bad number `{t}`")))
                })
                .collect::<Result<_, _>>()?;
            if v.len() != count {
                return Err(err(format!("expected {count} numbers, found {}", v.len())));
            }
            Ok(v)
        };
        let mut lines = text.lines().skip(5);
        let mut flat = Vec::with_capacity(net.params.len());
        for _ in 0..hidden_size {
            flat.extend(numbers(lines.next(), input_size)?);
        }
        for (section, count) in [
            ("bias_hidden", hidden_size),
            ("weights_ho", hidden_size),
            ("bias_output", 1),
        ] {
            if lines.next() != Some(section) {
                return Err(err(format!("missing section `{section}`")));
            }
            flat.extend(numbers(lines.next(), count)?);
        }
        if !flat.iter().all(|w| w.is_finite()) {
            return Err(NetworkError::NonFinite("decoded weights"));
        }
        net.params = flat;
        Ok(net)
    }
}
