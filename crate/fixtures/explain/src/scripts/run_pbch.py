# Not a C-family source; the scanner must skip it.
def parse(flag):
    match flag:
        case 'o': cfo_hz = 1
