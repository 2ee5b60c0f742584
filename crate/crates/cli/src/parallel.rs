use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{CliError, CliResult};

/// Worker cap from `XFERLAB_THREADS`, defaulting to the available cores.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("XFERLAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::config(
                "ENV_INVALID",
                format!("XFERLAB_THREADS must be a positive integer, got {v:?}"),
            )),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Maps `f` over `items` on up to `threads` workers; results keep input
/// order, so output never depends on scheduling.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> CliResult<R> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CliResult<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept_for_any_worker_count() {
        let items: Vec<u64> = (0..17).collect();
        let serial = par_map(&items, 1, |x| Ok(x * x)).unwrap();
        for t in [2, 3, 8] {
            assert_eq!(par_map(&items, t, |x| Ok(x * x)).unwrap(), serial);
        }
    }

    #[test]
    fn first_error_in_order_is_returned() {
        let items: Vec<u64> = (0..6).collect();
        let r = par_map(&items, 3, |x| {
            if *x >= 2 {
                Err(CliError::config("X", format!("{x}")))
            } else {
                Ok(*x)
            }
        });
        assert_eq!(r.unwrap_err().message, "2");
    }
}
