use super::{Dataset, Image2C, ImageMC, Plane, SplitTag};
use crate::error::{Error, Result};

/// Squared L2 distance between two red channels, accumulated in f64.
pub fn red_distance(a: &Plane, b: &Plane) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Builds `(c+1)`-channel composites from the training split.
///
/// For every training image of class `k` the green of slot `k` is its own; slot
/// `j` receives the green of the class-`j` training image whose red channel is
/// closest, ties going to the lowest dataset index. `classes` fixes the slot
/// order and the class list of the result. Work is spread over `workers`
/// threads; the output does not depend on that number.
pub fn mine_multichannel(ds: &Dataset, classes: &[String], workers: usize) -> Result<Dataset<ImageMC>> {
    let mut pools = Vec::with_capacity(classes.len());
    for name in classes {
        let ci = ds
            .class_index(name)
            .ok_or_else(|| Error::Mining(format!("unknown class {name:?}")))?;
        let pool = ds.indices_of(SplitTag::Train, ci);
        if pool.is_empty() {
            return Err(Error::Mining(format!("class {name:?} has no training images")));
        }
        pools.push((ci, pool));
    }
    let queries: Vec<(usize, usize)> = pools
        .iter()
        .enumerate()
        .flat_map(|(slot, (_, pool))| pool.iter().map(move |&i| (slot, i)))
        .collect();

    let nearest = |query: &Image2C, pool: &[usize]| -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &j in pool {
            let d = red_distance(&query.red, &ds.items[j].red);
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    };
    let mine_one = |&(slot, i): &(usize, usize)| -> ImageMC {
        let query = &ds.items[i];
        let source_ids: Vec<usize> = pools
            .iter()
            .enumerate()
            .map(|(j, (_, pool))| if j == slot { i } else { nearest(query, pool) })
            .collect();
        ImageMC {
            red: query.red.clone(),
            greens: source_ids.iter().map(|&s| ds.items[s].green.clone()).collect(),
            source_ids,
            class: slot,
        }
    };

    let workers = workers.max(1).min(queries.len().max(1));
    let chunk = queries.len().div_ceil(workers).max(1);
    let items: Vec<ImageMC> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(mine_one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("mining worker panicked"))
            .collect()
    });
    Ok(Dataset::new(classes.to_vec(), items))
}
