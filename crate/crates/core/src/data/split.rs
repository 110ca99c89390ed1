use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Split, StudyTable};

/// Sizes of `segments` contiguous parts of `total`; earlier parts take the
/// remainder.
pub fn segment_sizes(total: usize, segments: usize) -> Vec<usize> {
    let base = total / segments;
    let extra = total % segments;
    (0..segments).map(|s| base + usize::from(s < extra)).collect()
}

/// Earliest `round(train_fraction * N)` subjects by screening order (ties by
/// id) become training; the rest are cut into `test_segments` consecutive
/// test segments.
pub fn chronological_split(table: &mut StudyTable, train_fraction: f64, test_segments: usize) -> Result<(), DataError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DataError::Invalid(format!("train_fraction {train_fraction} outside [0, 1]")));
    }
    if test_segments == 0 {
        return Err(DataError::Invalid("test_segments must be at least 1".into()));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(table.len());
    for (i, s) in table.subjects.iter().enumerate() {
        if s.split == Split::Excluded {
            continue;
        }
        let key = s.screening_order.ok_or_else(|| DataError::MissingOrder(s.id.clone()))?;
        order.push((key, i));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| table.subjects[a.1].id.cmp(&table.subjects[b.1].id)));
    let n_train = (train_fraction * order.len() as f64).round() as usize;
    for &(_, i) in &order[..n_train] {
        table.subjects[i].split = Split::Train;
    }
    let mut pos = n_train;
    for (segment, size) in segment_sizes(order.len() - n_train, test_segments).into_iter().enumerate() {
        for &(_, i) in &order[pos..pos + size] {
            table.subjects[i].split = Split::Test { segment };
        }
        pos += size;
    }
    Ok(())
}

/// Moves a stratified random `fraction` of the training subjects to the
/// validation split.
pub fn carve_validation(table: &mut StudyTable, fraction: f64, seed: u64) -> Result<(), DataError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(DataError::Invalid(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let train = table.train_indices();
    let labels = table.labels_of(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [0u8, 1] {
        let mut members: Vec<usize> = train.iter().zip(&labels).filter(|(_, &l)| l == class).map(|(&i, _)| i).collect();
        members.shuffle(&mut rng);
        let take = (fraction * members.len() as f64).round() as usize;
        for &i in &members[..take] {
            table.subjects[i].split = Split::Validation;
        }
    }
    Ok(())
}
