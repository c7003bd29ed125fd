//! Labelled datasets, per-sample models and the Dirichlet label partitioner.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{check_client, check_dim, Task};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::partition::{TensorKind, TensorMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<I> {
    pub inputs: Vec<I>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<I> Dataset<I> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A differentiable per-sample loss.
pub trait Model: Send + Sync {
    type Input: Send + Sync;

    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn layout(&self) -> Vec<TensorMeta>;

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn check_input(&self, input: &Self::Input) -> Result<()>;

    /// Adds the gradient of the sample loss into `grad`; returns the loss.
    fn accumulate(&self, params: &[f64], input: &Self::Input, label: usize, grad: &mut [f64]) -> f64;
}

/// Numerically stable softmax cross-entropy. Returns the loss and overwrites
/// `logits` with `softmax(logits) - onehot(label)`.
pub(crate) fn softmax_xent_in_place(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    let loss = z.ln() - (logits[label].ln());
    for l in logits.iter_mut() {
        *l /= z;
    }
    logits[label] -= 1.0;
    loss
}

pub(crate) fn gaussian_init(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Multinomial logistic regression: `logits = W z + b`.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    features: usize,
    classes: usize,
}

impl LogisticModel {
    pub fn new(features: usize, classes: usize) -> Result<Self> {
        if features == 0 || classes < 2 {
            return Err(Error::Config("logistic model needs >= 1 feature and >= 2 classes".into()));
        }
        Ok(LogisticModel { features, classes })
    }
}

impl Model for LogisticModel {
    type Input = Vec<f64>;

    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn layout(&self) -> Vec<TensorMeta> {
        vec![
            TensorMeta::new("linear.weight", TensorKind::Mlp, &[self.classes, self.features])
                .with_out_neurons(self.classes),
            TensorMeta::new("linear.bias", TensorKind::Other, &[self.classes]),
        ]
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = gaussian_init(self.classes * self.features, 0.01, rng);
        p.extend(std::iter::repeat_n(0.0, self.classes));
        p
    }

    fn check_input(&self, input: &Vec<f64>) -> Result<()> {
        if input.len() != self.features {
            return Err(Error::LengthMismatch {
                expected: self.features,
                found: input.len(),
            });
        }
        Ok(())
    }

    fn accumulate(&self, params: &[f64], z: &Vec<f64>, label: usize, grad: &mut [f64]) -> f64 {
        let (p, c) = (self.features, self.classes);
        let (w, b) = params.split_at(c * p);
        let mut logits: Vec<f64> = (0..c)
            .map(|k| b[k] + w[k * p..(k + 1) * p].iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let loss = softmax_xent_in_place(&mut logits, label);
        let (gw, gb) = grad.split_at_mut(c * p);
        for k in 0..c {
            let delta = logits[k];
            for (g, x) in gw[k * p..(k + 1) * p].iter_mut().zip(z) {
                *g += delta * x;
            }
            gb[k] += delta;
        }
        loss
    }
}

/// Per-client index lists produced by [`dirichlet_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPartition {
    pub clients: Vec<Vec<usize>>,
    /// Samples moved to otherwise empty clients.
    pub repairs: usize,
}

/// Splits samples across `num_clients` clients by label.
///
/// For every class, client proportions are drawn from `Dirichlet(conc * 1)`
/// and each sample of that class goes to a client drawn from those
/// proportions. Clients left empty receive one sample taken from the current
/// largest client. Index lists are returned sorted.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    conc: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DirichletPartition> {
    if !(conc.is_finite() && conc > 0.0) {
        return Err(Error::Config(format!("dirichlet concentration must be > 0 (got {conc})")));
    }
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if labels.len() < num_clients {
        return Err(Error::Config(format!(
            "{} samples cannot fill {num_clients} non-empty clients",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let gamma = Gamma::new(conc, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut weights: Vec<f64> = (0..num_clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // every gamma draw underflowed: all mass on one client
            weights.iter_mut().for_each(|w| *w = 0.0);
            weights[rng.random_range(0..num_clients)] = 1.0;
        }
        let mut cumulative = Vec::with_capacity(num_clients);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        for j in members {
            let u: f64 = rng.random::<f64>() * acc;
            let client = cumulative.partition_point(|&c| c <= u).min(num_clients - 1);
            clients[client].push(j);
        }
    }
    let mut repairs = 0;
    while let Some(empty) = clients.iter().position(|c| c.is_empty()) {
        let donor = (0..num_clients)
            .max_by_key(|&i| (clients[i].len(), std::cmp::Reverse(i)))
            .expect("at least one client");
        let moved = clients[donor].pop().expect("donor holds more than one sample");
        clients[empty].push(moved);
        repairs += 1;
    }
    for c in clients.iter_mut() {
        c.sort_unstable();
    }
    Ok(DirichletPartition { clients, repairs })
}

/// Gaussian class clusters: `x = separation * mu_c + noise`, with `mu_c` and
/// the noise standard normal in every coordinate.
pub fn synthetic_clusters(
    features: usize,
    classes: usize,
    per_class: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset<Vec<f64>>> {
    if features == 0 || classes < 2 || per_class == 0 {
        return Err(Error::Config("cluster data needs features >= 1, classes >= 2, samples >= 1".into()));
    }
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| gaussian_init(features, separation, rng)).collect();
    let mut inputs = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let noise = gaussian_init(features, 1.0, rng);
            inputs.push(centre.iter().zip(noise).map(|(m, e)| m + e).collect());
            labels.push(c);
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: classes,
    })
}

/// Token sequences whose label is the over-represented token: every position
/// of a class-`c` sequence is `c` with probability 1/2, otherwise uniform.
pub fn synthetic_token_sequences(
    tokens: usize,
    seq_len: usize,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset<Vec<usize>>> {
    if tokens < 2 || seq_len == 0 || per_class == 0 {
        return Err(Error::Config("token data needs tokens >= 2, seq_len >= 1, samples >= 1".into()));
    }
    let mut inputs = Vec::with_capacity(tokens * per_class);
    let mut labels = Vec::with_capacity(tokens * per_class);
    for c in 0..tokens {
        for _ in 0..per_class {
            let seq = (0..seq_len)
                .map(|_| {
                    if rng.random::<bool>() {
                        c
                    } else {
                        rng.random_range(0..tokens)
                    }
                })
                .collect();
            inputs.push(seq);
            labels.push(c);
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: tokens,
    })
}

/// Reads `features..., label` rows. A first row that does not parse as
/// numbers is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Config(format!("{} line {}: {e}", path.display(), line + 1)));
            }
        };
        if row.len() < 2 {
            return Err(Error::Config(format!("{} line {}: need features and a label", path.display(), line + 1)));
        }
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Config(format!("{} line {}: ragged row", path.display(), line + 1)));
        }
        let (features, label) = row.split_at(row.len() - 1);
        let label = label[0];
        if !(label >= 0.0 && label.fract() == 0.0) {
            return Err(Error::Config(format!(
                "{} line {}: label {label} is not a class id",
                path.display(),
                line + 1
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} line {}", path.display(), line + 1)));
        }
        inputs.push(features.to_vec());
        labels.push(label as usize);
    }
    if inputs.is_empty() {
        return Err(Error::Config(format!("{} holds no samples", path.display())));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    if num_classes < 2 {
        return Err(Error::Config(format!("{} has a single class", path.display())));
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes,
    })
}

/// A model trained on a dataset split across clients.
#[derive(Debug, Clone)]
pub struct DataTask<M: Model> {
    model: M,
    data: Dataset<M::Input>,
    clients: Vec<Vec<usize>>,
    batch_size: Option<usize>,
    init: Vec<f64>,
    repairs: usize,
}

impl<M: Model> DataTask<M> {
    pub fn new(
        model: M,
        data: Dataset<M::Input>,
        num_clients: usize,
        dirichlet_alpha: f64,
        batch_size: Option<usize>,
        init_rng: &mut ChaCha8Rng,
        split_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let split = dirichlet_partition(&data.labels, num_clients, dirichlet_alpha, split_rng)?;
        Self::with_clients(model, data, split.clients, batch_size, init_rng).map(|mut t| {
            t.repairs = split.repairs;
            t
        })
    }

    /// Uses caller-provided client index lists, which must be a disjoint
    /// cover of the samples.
    pub fn with_clients(
        model: M,
        data: Dataset<M::Input>,
        clients: Vec<Vec<usize>>,
        batch_size: Option<usize>,
        init_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if data.num_classes > model.num_classes() {
            return Err(Error::Config(format!(
                "data has {} classes but the model predicts {}",
                data.num_classes,
                model.num_classes()
            )));
        }
        for input in &data.inputs {
            model.check_input(input)?;
        }
        let mut seen = vec![false; data.len()];
        for list in &clients {
            if list.is_empty() {
                return Err(Error::Config("client with no samples".into()));
            }
            for &j in list {
                if j >= seen.len() || std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Config(format!("sample {j} assigned twice or out of range")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("client lists do not cover every sample".into()));
        }
        if batch_size == Some(0) {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let init = model.init(init_rng);
        Ok(DataTask {
            model,
            data,
            clients,
            batch_size,
            init,
            repairs: 0,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn client_indices(&self, client: usize) -> &[usize] {
        &self.clients[client]
    }

    fn mean_over(&self, x: &ParamVector, indices: impl ExactSizeIterator<Item = usize>) -> Result<(f64, ParamVector)> {
        let n = indices.len() as f64;
        let mut grad = vec![0.0; self.model.dim()];
        let mut loss = 0.0;
        for j in indices {
            loss += self.model.accumulate(x.as_slice(), &self.data.inputs[j], self.data.labels[j], &mut grad);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, ParamVector::from_vec(grad)?))
    }
}

impl<M: Model> Task for DataTask<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn layout(&self) -> Vec<TensorMeta> {
        self.model.layout()
    }

    fn empty_client_repairs(&self) -> usize {
        self.repairs
    }

    fn initial_params(&self) -> ParamVector {
        ParamVector::from_vec(self.init.clone()).expect("finite initialisation")
    }

    fn loss_and_grad(&self, x: &ParamVector, client: usize, rng: &mut ChaCha8Rng) -> Result<(f64, ParamVector)> {
        check_dim(x, self.dim())?;
        check_client(client, self.num_clients())?;
        let pool = &self.clients[client];
        match self.batch_size {
            None => self.mean_over(x, pool.iter().copied()),
            Some(b) => {
                let batch: Vec<usize> = (0..b).map(|_| pool[rng.random_range(0..pool.len())]).collect();
                self.mean_over(x, batch.into_iter())
            }
        }
    }

    fn client_loss_and_grad(&self, x: &ParamVector, client: usize) -> Result<(f64, ParamVector)> {
        check_dim(x, self.dim())?;
        check_client(client, self.num_clients())?;
        self.mean_over(x, self.clients[client].iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive_rng, Purpose, SeedSpec};
    use crate::tasks::{finite_diff_check, random_point};

    fn rng(seed: u64) -> ChaCha8Rng {
        derive_rng(&SeedSpec::new(seed), 0, 0, Purpose::DataPartition)
    }

    fn labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    fn assert_disjoint_cover(p: &DirichletPartition, n: usize) {
        let mut all: Vec<usize> = p.clients.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn single_client_gets_everything() {
        let l = labels(3, 10);
        let p = dirichlet_partition(&l, 1, 0.1, &mut rng(0)).unwrap();
        assert_eq!(p.clients[0], (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn nonpositive_concentration_is_rejected() {
        assert!(dirichlet_partition(&[0, 1], 1, 0.0, &mut rng(0)).is_err());
        assert!(dirichlet_partition(&[0, 1], 1, -1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn large_concentration_is_near_uniform() {
        let (classes, per_class, n) = (4, 1000, 5);
        let l = labels(classes, per_class);
        let p = dirichlet_partition(&l, n, 1e6, &mut rng(1)).unwrap();
        assert_disjoint_cover(&p, l.len());
        for c in 0..classes {
            for client in &p.clients {
                let share = client.iter().filter(|&&j| l[j] == c).count() as f64 / per_class as f64;
                assert!((share - 1.0 / n as f64).abs() < 0.05, "share {share}");
            }
        }
    }

    #[test]
    fn tiny_concentration_still_covers_and_repairs() {
        let l = labels(2, 50);
        let p = dirichlet_partition(&l, 20, 1e-3, &mut rng(2)).unwrap();
        assert_disjoint_cover(&p, l.len());
        assert!(p.clients.iter().all(|c| !c.is_empty()));
        assert!(p.repairs > 0);
    }

    #[test]
    fn class_coverage_grows_with_concentration() {
        let l = labels(5, 40);
        let n = 10;
        let mut prev = 0.0;
        for conc in [0.01, 0.1, 1.0, 10.0] {
            let mut coverage = 0.0;
            for draw in 0..100 {
                let p = dirichlet_partition(&l, n, conc, &mut rng(100 + draw)).unwrap();
                assert_disjoint_cover(&p, l.len());
                for c in 0..5 {
                    let holders = p.clients.iter().filter(|cl| cl.iter().any(|&j| l[j] == c)).count();
                    coverage += holders as f64 / (n * 5 * 100) as f64;
                }
            }
            assert!(coverage >= prev, "conc {conc}: {coverage} < {prev}");
            prev = coverage;
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut r = rng(3);
        let data = synthetic_clusters(5, 3, 20, 1.0, &mut r).unwrap();
        let task = DataTask::new(LogisticModel::new(5, 3).unwrap(), data, 3, 1.0, None, &mut r, &mut rng(4)).unwrap();
        for client in 0..3 {
            let x = random_point(task.dim(), 1.0, &mut r);
            let rep = finite_diff_check(&task, &x, client, 1e-5, &mut r).unwrap();
            assert!(rep.passed, "{}", rep.max_rel_error);
        }
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let mut r = rng(5);
        let data = synthetic_clusters(3, 2, 10, 1.0, &mut r).unwrap();
        let clients = vec![(0..20).collect()];
        let task = DataTask::with_clients(LogisticModel::new(3, 2).unwrap(), data, clients, Some(4), &mut r).unwrap();
        let x = random_point(task.dim(), 0.5, &mut r);
        let (_, exact) = task.client_loss_and_grad(&x, 0).unwrap();
        let draws = 20_000;
        let mut mean = vec![0.0; task.dim()];
        for _ in 0..draws {
            let (_, g) = task.loss_and_grad(&x, 0, &mut r).unwrap();
            for (m, gj) in mean.iter_mut().zip(g.iter()) {
                *m += gj / draws as f64;
            }
        }
        for (m, e) in mean.iter().zip(exact.iter()) {
            assert!((m - e).abs() < 0.02, "{m} vs {e}");
        }
    }

    #[test]
    fn client_lists_must_cover() {
        let mut r = rng(6);
        let data = synthetic_clusters(2, 2, 2, 1.0, &mut r).unwrap();
        let overlap = vec![vec![0, 1], vec![1, 2, 3]];
        assert!(DataTask::with_clients(LogisticModel::new(2, 2).unwrap(), data.clone(), overlap, None, &mut r).is_err());
        let missing = vec![vec![0, 1], vec![2]];
        assert!(DataTask::with_clients(LogisticModel::new(2, 2).unwrap(), data, missing, None, &mut r).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("fedopt-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        std::fs::write(&path, "f1,f2,label\n0.5,1.0,0\n-1.5,2.0,1\n3,4,2\n").unwrap();
        let d = load_csv(&path).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_classes, 3);
        assert_eq!(d.inputs[1], vec![-1.5, 2.0]);
        std::fs::write(&path, "0.5,1.0,0.5\n").unwrap();
        assert!(load_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
