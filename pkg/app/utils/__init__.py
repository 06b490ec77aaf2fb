# utils package